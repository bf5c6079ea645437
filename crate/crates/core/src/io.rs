//! Artifact output. CSV and Markdown files start with a `#` comment line
//! carrying the artifact version and the config hash; JSON files carry the
//! same two values as top-level fields.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn header_line(config_hash: &str) -> String {
    format!("# fqchopt {ARTIFACT_VERSION} config_hash={config_hash}")
}

/// Writes stamped artifacts into one directory.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    config_hash: String,
}

impl ArtifactWriter {
    pub fn new(dir: impl AsRef<Path>, config_hash: impl Into<String>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, config_hash: config_hash.into() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Creates `name` with the header line written; `body` fills the rest.
    pub fn write_text<F>(&self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", header_line(&self.config_hash))?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Markdown variant of [`write_text`](Self::write_text); the header is an HTML comment.
    pub fn write_markdown(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "<!-- {} -->", &header_line(&self.config_hash)[2..])?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(path)
    }

    /// Serializes `value` (which must be a JSON object) with `version` and
    /// `config_hash` added.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        let Value::Object(map) = &mut v else {
            return Err(Error::Config(format!("{name}: JSON artifacts must be objects")));
        };
        map.insert("version".into(), Value::String(ARTIFACT_VERSION.into()));
        map.insert("config_hash".into(), Value::String(self.config_hash.clone()));
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifacts_are_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let w = ArtifactWriter::new(dir.path().join("out"), "00ff").unwrap();
        let csv = w.write_text("a.csv", |o| writeln!(o, "x,y")).unwrap();
        let text = fs::read_to_string(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), header_line("00ff"));
        assert_eq!(text.lines().nth(1).unwrap(), "x,y");

        let md = w.write_markdown("r.md", "# Title\n").unwrap();
        let text = fs::read_to_string(md).unwrap();
        assert!(text.starts_with("<!-- fqchopt ") && text.contains("config_hash=00ff -->"));

        let js = w.write_json("s.json", &serde_json::json!({ "ok": true })).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(js).unwrap()).unwrap();
        assert_eq!(v["config_hash"], "00ff");
        assert_eq!(v["version"], ARTIFACT_VERSION);
        assert!(w.write_json("bad.json", &3).is_err());
    }
}
