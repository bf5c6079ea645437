//! JSON scenario configuration with named presets.
//!
//! A configuration document names a preset and overrides any subset of its
//! keys. The merged document is parsed strictly: unknown keys are rejected.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ControlTrajectory, InitialState, ModelConfig, NewtonOptions, Nonlinearity};
use crate::optimizer::{ContinuationOptions, ControlConstraints, CostConfig, OptimizerOptions};
use crate::potentials::{PhiKind, QuenchSchedule, SmoothPart};
use crate::spectral::{BasisKind, Domain, EigenBasis};

pub const PRESETS: [&str; 2] = ["a9-1d", "dirichlet-1d"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lengths: Vec<f64>,
    pub points: Vec<usize>,
}

/// Closed-form fields on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    /// `amplitude * prod_axis cos(mode pi x / L)`
    Cosine { amplitude: f64, mode: usize },
    /// Random combination of the first `modes` cosines, scaled to max-norm `amplitude`.
    RandomSmooth { amplitude: f64, modes: usize, seed: u64 },
}

impl FieldSpec {
    pub fn sample(&self, domain: &Domain) -> Vec<f64> {
        let coords = domain.coords();
        let lengths = domain.lengths();
        match *self {
            FieldSpec::Constant { value } => vec![value; coords.len()],
            FieldSpec::Cosine { amplitude, mode } => coords
                .iter()
                .map(|x| {
                    amplitude
                        * x.iter()
                            .zip(lengths)
                            .map(|(xi, l)| (mode as f64 * PI * xi / l).cos())
                            .product::<f64>()
                })
                .collect(),
            FieldSpec::RandomSmooth { amplitude, modes, seed } => {
                random_smooth(domain, amplitude, modes, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        }
    }
}

/// Random cosine series with `1/k` decay, normalized to max-norm `amplitude`.
pub fn random_smooth<R: Rng>(domain: &Domain, amplitude: f64, modes: usize, rng: &mut R) -> Vec<f64> {
    let coords = domain.coords();
    let lengths = domain.lengths().to_vec();
    let dim = lengths.len();
    let mut terms = Vec::new();
    for _ in 0..modes.max(1) {
        let ks: Vec<usize> = (0..dim).map(|_| rng.gen_range(0..=modes)).collect();
        let a: f64 = rng.gen_range(-1.0..1.0);
        let scale = 1.0 + ks.iter().sum::<usize>() as f64;
        terms.push((ks, a / scale));
    }
    let mut v: Vec<f64> = coords
        .iter()
        .map(|x| {
            terms
                .iter()
                .map(|(ks, a)| {
                    a * ks
                        .iter()
                        .zip(x)
                        .zip(&lengths)
                        .map(|((k, xi), l)| (*k as f64 * PI * xi / l).cos())
                        .product::<f64>()
                })
                .sum()
        })
        .collect();
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x *= amplitude / m);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ControlSpec {
    Zero,
    Constant { value: f64 },
    /// Separable `amplitude * f(x) * sin(pi t / T)` with `f` random smooth.
    RandomSmooth { amplitude: f64, modes: usize, seed: u64 },
}

impl ControlSpec {
    pub fn build(&self, cfg: &ModelConfig) -> ControlTrajectory {
        match *self {
            ControlSpec::Zero => ControlTrajectory::zeros(cfg),
            ControlSpec::Constant { value } => ControlTrajectory::constant(cfg, value),
            ControlSpec::RandomSmooth { amplitude, modes, seed } => {
                let shape = random_smooth(cfg.domain(), amplitude, modes, &mut ChaCha8Rng::seed_from_u64(seed));
                let t_final = cfg.t_final;
                let mut u = ControlTrajectory::zeros(cfg);
                let times = cfg.times();
                for (m, slab) in u.values_mut().iter_mut().enumerate() {
                    let s = (PI * times[m] / t_final).sin();
                    slab.iter_mut().zip(&shape).for_each(|(v, f)| *v = s * f);
                }
                u
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub beta: [f64; 3],
    pub y_omega: f64,
    pub y_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub max_iter: usize,
    pub tol_stat: Option<f64>,
    pub adapted: bool,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckSpec {
    pub directions: usize,
    pub eps: f64,
    pub tol: f64,
    /// Newton tolerance used for the finite-difference solves.
    pub newton_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub points: usize,
    /// Quench parameter of the reduced instance; small values push the state
    /// closer to the barrier than floating point can resolve at its coarse step.
    pub alpha: f64,
    /// `A` of the reduced instance. With a Neumann `A` the mass constraint
    /// removes spatially constant controls, so the default is Dirichlet.
    pub operator_a: BasisKind,
    pub steps: usize,
    pub pieces: usize,
    pub grid: usize,
    pub zoom_levels: usize,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub min_slope: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: String,
    pub domain: DomainSpec,
    pub operator_a: BasisKind,
    pub operator_b: BasisKind,
    pub r: f64,
    pub sigma: f64,
    pub tau: f64,
    pub dt: f64,
    pub t_final: f64,
    pub c1: f64,
    pub phi: PhiKind,
    pub alpha: f64,
    pub yosida_lambda: f64,
    pub y0: FieldSpec,
    pub control: ControlSpec,
    pub cost: CostSpec,
    pub rho1: f64,
    pub rho2: f64,
    pub newton: NewtonOptions,
    pub optimizer: OptimizerSpec,
    pub sweep: SweepSpec,
    pub grad_check: GradCheckSpec,
    pub oracle: OracleSpec,
    pub seed: u64,
    /// Default artifact directory; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn preset_value(name: &str) -> Result<Value> {
    let a_kind = match name {
        "a9-1d" => "laplacian_neumann",
        "dirichlet-1d" => "laplacian_dirichlet",
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(json!({
        "preset": name,
        "domain": { "lengths": [1.0], "points": [32] },
        "operator_a": a_kind,
        "operator_b": "laplacian_neumann",
        "r": 0.5,
        "sigma": 0.5,
        "tau": 0.1,
        "dt": 1e-3,
        "t_final": 0.25,
        "c1": 1.0,
        "phi": "linear",
        "alpha": 0.1,
        "yosida_lambda": 1e-6,
        "y0": { "kind": "cosine", "amplitude": 0.2, "mode": 1 },
        "control": { "kind": "zero" },
        "cost": { "beta": [1.0, 1.0, 0.01], "y_omega": 0.1, "y_q": 0.0 },
        "rho1": 2.0,
        "rho2": 1e6,
        "newton": serde_json::to_value(NewtonOptions::default()).expect("serializable"),
        "optimizer": { "max_iter": 500, "tol_stat": null, "adapted": true, "probes": 50 },
        "sweep": { "alphas": [0.2, 0.1, 0.05, 0.025, 0.0125], "min_slope": 0.45, "margin": 1.1 },
        "grad_check": { "directions": 5, "eps": 1e-5, "tol": 1e-4, "newton_tol": 1e-13 },
        "oracle": { "points": 8, "alpha": 0.5, "operator_a": "laplacian_dirichlet", "steps": 4, "pieces": 3, "grid": 21, "zoom_levels": 3, "rel_tol": 0.01 },
        "seed": 20240917u64
    }))
}

/// Recursive merge: objects merge key by key, anything else is replaced.
pub fn deep_merge(base: &mut Value, overrides: &Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => deep_merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_value(preset_value(name)?)
    }

    /// Parses a configuration document; `preset` defaults to `"a9-1d"`.
    /// Replacing a tagged sub-object (such as `y0`) requires giving it in full.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &doc else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let name = match map.get("preset") {
            None => "a9-1d".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let mut base = preset_value(&name)?;
        let mut overrides = doc.clone();
        // tagged enums are replaced, not merged, to avoid mixing variants
        for key in ["y0", "control", "phi"] {
            if let (Some(v), Value::Object(b)) = (overrides.as_object_mut().and_then(|o| o.remove(key)), &mut base) {
                b.insert(key.to_string(), v);
            }
        }
        deep_merge(&mut base, &overrides);
        Self::from_value(base)
    }

    fn from_value(v: Value) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.initial_state()?;
        self.schedule()?;
        ControlConstraints::new(self.rho1, self.rho2)?;
        if !(self.yosida_lambda > 0.0) {
            return Err(Error::Config("yosida_lambda must be positive".into()));
        }
        if self.oracle.pieces == 0 || self.oracle.grid < 2 {
            return Err(Error::Config("oracle needs at least one piece and two grid points".into()));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the canonical serialization.
    pub fn hash(&self) -> u64 {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let text = serde_json::to_string(&canonical).expect("serializable");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn domain(&self) -> Result<Domain> {
        Domain::new(self.domain.lengths.clone(), self.domain.points.clone())
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let d = self.domain()?;
        let cfg = ModelConfig {
            basis_a: EigenBasis::shared(d.clone(), self.operator_a)?,
            basis_b: EigenBasis::shared(d, self.operator_b)?,
            r: self.r,
            sigma: self.sigma,
            tau: self.tau,
            dt: self.dt,
            t_final: self.t_final,
            smooth: SmoothPart::new(self.c1)?,
            nonlinearity: Nonlinearity::Quench { alpha: self.alpha, phi: self.phi },
            newton: self.newton,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_state(&self) -> Result<InitialState> {
        InitialState::new(self.y0.sample(&self.domain()?))
    }

    pub fn schedule(&self) -> Result<QuenchSchedule> {
        QuenchSchedule::new(self.phi, self.sweep.alphas.clone())
    }

    pub fn cost_config(&self, cfg: &ModelConfig) -> Result<CostConfig> {
        CostConfig::constant_targets(cfg, self.cost.beta, self.cost.y_omega, self.cost.y_q)
    }

    pub fn constraints(&self) -> Result<ControlConstraints> {
        ControlConstraints::new(self.rho1, self.rho2)
    }

    pub fn control(&self, cfg: &ModelConfig) -> ControlTrajectory {
        self.control.build(cfg)
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            max_iter: self.optimizer.max_iter,
            tol_stat: self.optimizer.tol_stat,
            probes: self.optimizer.probes,
            seed: self.seed ^ self.hash(),
            ..OptimizerOptions::default()
        }
    }

    /// The reduced instance searched by the brute-force oracle: `oracle.points`
    /// grid points per axis and `oracle.steps` time steps over the same horizon.
    pub fn oracle_scenario(&self) -> Result<ScenarioConfig> {
        let mut s = self.clone();
        s.domain.points = vec![self.oracle.points; self.domain.lengths.len()];
        s.dt = self.t_final / self.oracle.steps as f64;
        s.alpha = self.oracle.alpha;
        s.operator_a = self.oracle.operator_a;
        s.validate()?;
        Ok(s)
    }

    pub fn continuation_options(&self) -> ContinuationOptions {
        ContinuationOptions {
            optimizer: self.optimizer_options(),
            adapted: self.optimizer.adapted,
            oracle_lambda: self.yosida_lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_differ() {
        let a = ScenarioConfig::preset("a9-1d").unwrap();
        let d = ScenarioConfig::preset("dirichlet-1d").unwrap();
        assert!(a.model().unwrap().conserves_mass());
        assert!(!d.model().unwrap().conserves_mass());
        assert_ne!(a.hash(), d.hash());
        assert!(ScenarioConfig::preset("nope").is_err());
    }

    #[test]
    fn overrides_merge_and_unknown_keys_fail() {
        let c = ScenarioConfig::from_json_str(r#"{"tau": 0.2, "cost": {"y_omega": 0.0}}"#).unwrap();
        assert_eq!(c.tau, 0.2);
        assert_eq!(c.cost.y_omega, 0.0);
        assert_eq!(c.cost.beta, [1.0, 1.0, 0.01]);
        let y0 = ScenarioConfig::from_json_str(r#"{"y0": {"kind": "constant", "value": 0.0}}"#).unwrap();
        assert_eq!(y0.y0, FieldSpec::Constant { value: 0.0 });
        assert!(ScenarioConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
        assert!(ScenarioConfig::from_json_str(r#"{"newton": {"bogus": 1}}"#).is_err());
        assert!(matches!(ScenarioConfig::from_json_str("{ nope"), Err(Error::Json(_))));
        assert!(ScenarioConfig::from_json_str(r#"{"dt": 0.3}"#).is_err());
    }

    #[test]
    fn hash_is_stable() {
        let a = ScenarioConfig::preset("a9-1d").unwrap();
        let b = ScenarioConfig::from_json_str("{}").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash_hex().len(), 16);
        let moved = ScenarioConfig::from_json_str(r#"{"output_dir": "elsewhere"}"#).unwrap();
        assert_eq!(moved.hash(), a.hash());
        let reseeded = ScenarioConfig::from_json_str(r#"{"seed": 1}"#).unwrap();
        assert_ne!(reseeded.hash(), a.hash());
    }

    #[test]
    fn random_fields_are_seeded() {
        let d = Domain::interval(1.0, 16).unwrap();
        let f = FieldSpec::RandomSmooth { amplitude: 0.5, modes: 4, seed: 7 };
        let a = f.sample(&d);
        assert_eq!(a, f.sample(&d));
        assert!((a.iter().fold(0.0_f64, |m, x| m.max(x.abs())) - 0.5).abs() < 1e-15);
    }
}
