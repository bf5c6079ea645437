use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use fqch_core::analysis::{alpha_rate_study, compare_with_brute_force, fd_gradient_oracle, random_directions};
use fqch_core::io::{ArtifactWriter, ARTIFACT_VERSION};
use fqch_core::model::{ControlTrajectory, ModelConfig};
use fqch_core::optimizer::deep_quench_continuation;
use fqch_core::scenario::ScenarioConfig;
use fqch_core::state::{StateSolver, StateTrajectory};
use fqch_core::Error;

use crate::Failure;

pub struct Context {
    command: &'static str,
    scenario: ScenarioConfig,
    writer: ArtifactWriter,
}

/// What a command produced: summary fields and the assertions that failed.
struct Report {
    results: Value,
    failed: Vec<String>,
}

impl Context {
    pub fn new(command: &'static str, scenario: ScenarioConfig, out: &Path) -> Result<Self, Failure> {
        let writer = ArtifactWriter::new(out, scenario.hash_hex())
            .map_err(|e| Failure::Config(format!("output directory {}: {e}", out.display())))?;
        Ok(Self { command, scenario, writer })
    }

    fn model(&self) -> Result<(ModelConfig, StateSolver), Error> {
        let cfg = self.scenario.model()?;
        let solver = StateSolver::new(cfg.clone())?;
        Ok((cfg, solver))
    }

    /// Writes `summary.json` for every outcome and maps it to the exit status.
    fn finish(&self, outcome: Result<Report, Error>) -> Result<(), Failure> {
        let (status, failure, body) = match outcome {
            Ok(r) if r.failed.is_empty() => ("ok", None, json!({ "results": r.results })),
            Ok(r) => {
                let msg = r.failed.join("; ");
                let body = json!({ "results": r.results, "failed_assertions": r.failed });
                ("assertion_failed", Some(Failure::Assertion(msg)), body)
            }
            Err(e) => {
                let f = Failure::from(e);
                let (status, msg) = match &f {
                    Failure::Config(m) => ("config_error", m.clone()),
                    Failure::Solver(m) | Failure::Assertion(m) => ("solver_failure", m.clone()),
                };
                (status, Some(f), json!({ "error": msg }))
            }
        };
        let code = failure.as_ref().map_or(0, |f| f.code());
        let mut summary = json!({
            "command": self.command,
            "status": status,
            "exit_code": code,
            "artifact_version": ARTIFACT_VERSION,
            "scenario": self.scenario,
        });
        if let (Value::Object(s), Value::Object(b)) = (&mut summary, body) {
            s.extend(b);
        }
        self.writer
            .write_json("summary.json", &summary)
            .map_err(|e| Failure::Config(format!("writing summary: {e}")))?;
        failure.map_or(Ok(()), Err)
    }
}

fn coord_header(cfg: &ModelConfig) -> String {
    (0..cfg.domain().dimension()).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
}

fn coord_row(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write_trajectory(w: &mut dyn Write, cfg: &ModelConfig, traj: &StateTrajectory) -> std::io::Result<()> {
    let coords = cfg.domain().coords();
    writeln!(w, "m,t,{},y,mu", coord_header(cfg))?;
    for (m, y) in traj.y.iter().enumerate() {
        for (i, x) in coords.iter().enumerate() {
            let mu = if m == 0 { String::new() } else { traj.mu[m - 1][i].to_string() };
            writeln!(w, "{m},{},{},{},{mu}", traj.times[m], coord_row(x), y[i])?;
        }
    }
    Ok(())
}

fn write_control(w: &mut dyn Write, cfg: &ModelConfig, u: &ControlTrajectory) -> std::io::Result<()> {
    let coords = cfg.domain().coords();
    let times = cfg.times();
    writeln!(w, "m,t,{},u", coord_header(cfg))?;
    for (m, slab) in u.values().iter().enumerate() {
        for (x, v) in coords.iter().zip(slab) {
            writeln!(w, "{m},{},{},{v}", times[m], coord_row(x))?;
        }
    }
    Ok(())
}

pub fn solve(ctx: &Context) -> Result<(), Failure> {
    ctx.finish((|| {
        let (cfg, solver) = ctx.model()?;
        let init = ctx.scenario.initial_state()?;
        let u = ctx.scenario.control(&cfg);
        let (traj, energy) = solver.solve(&init, &u)?;
        ctx.writer.write_text("trajectory.csv", |w| write_trajectory(w, &cfg, &traj))?;
        ctx.writer.write_text("energy.csv", |w| energy.write_csv(w))?;
        Ok(Report {
            results: json!({
                "steps": traj.steps(),
                "max_abs_y": traj.max_abs(),
                "separation": [traj.separation.0, traj.separation.1],
                "mass_drift": traj.mass_drift(),
                "energy_initial": energy.energy[0],
                "energy_final": energy.energy[energy.energy.len() - 1],
                "energy_nonincreasing": energy.is_nonincreasing(),
                "identity_residual": energy.identity_residual(),
                "newton_iterations": traj.total_newton_iterations(),
            }),
            failed: Vec::new(),
        })
    })())
}

pub fn quench_sweep(ctx: &Context) -> Result<(), Failure> {
    ctx.finish((|| {
        let s = &ctx.scenario;
        let (cfg, solver) = ctx.model()?;
        let init = s.initial_state()?;
        let u = s.control(&cfg);
        s.schedule()?;
        let report = alpha_rate_study(&solver, &init, &u, &s.sweep.alphas, s.yosida_lambda)?;
        ctx.writer.write_text("rate_fit.csv", |w| report.write_csv(w))?;
        if let Some(msg) = &report.failure {
            return Err(Error::Singular(format!("sweep aborted, partial table written: {msg}")));
        }
        let fit = report.fit.as_ref().expect("complete sweep has a fit");
        let mut md = String::from("# Deep-quench rate study\n\n| alpha | C0L2 | L2H1 | error |\n|---|---|---|---|\n");
        for r in &report.rows {
            let _ = writeln!(md, "| {} | {:.4e} | {:.4e} | {:.4e} |", r.alpha, r.c0_l2, r.l2_h1, r.error);
        }
        let _ = write!(
            md,
            "\n- slope (least squares, coarsest sample excluded): {:.4}\n- K2 = e(alpha_0)/sqrt(alpha_0): {:.4e}\n- max e/(K2 sqrt(alpha)): {:.4}\n- fit residual: {:.3e}\n- monotone: {}\n- oracle sensitivity (lambda vs lambda/10): {:.3e}\n",
            fit.slope,
            fit.k2,
            fit.max_ratio(),
            fit.residual,
            fit.is_monotone(),
            report.oracle_sensitivity
        );
        ctx.writer.write_markdown("rate_fit.md", &md)?;
        let mut failed = Vec::new();
        if fit.slope < s.sweep.min_slope {
            failed.push(format!("slope {:.4} below {}", fit.slope, s.sweep.min_slope));
        }
        if fit.max_ratio() > s.sweep.margin {
            failed.push(format!("max ratio {:.4} above {}", fit.max_ratio(), s.sweep.margin));
        }
        Ok(Report { results: serde_json::to_value(&report)?, failed })
    })())
}

pub fn optimize(ctx: &Context) -> Result<(), Failure> {
    ctx.finish((|| {
        let s = &ctx.scenario;
        let (cfg, solver) = ctx.model()?;
        let init = s.initial_state()?;
        let cost = s.cost_config(&cfg)?;
        let constraints = s.constraints()?;
        let u0 = s.control(&cfg);
        let report = deep_quench_continuation(
            &solver,
            &init,
            &cost,
            &constraints,
            &s.schedule()?.alphas,
            &u0,
            &s.continuation_options(),
        )?;
        ctx.writer.write_text("continuation.csv", |w| report.write_csv(w))?;
        if let Some(u) = report.final_control() {
            ctx.writer.write_text("control.csv", |w| write_control(w, &cfg, u))?;
        }
        if let Some(msg) = &report.failure {
            return Err(Error::Singular(format!("continuation aborted: {msg}")));
        }
        let mut failed = Vec::new();
        if report.non_monotone_steps() > 1 {
            failed.push(format!("{} non-monotone cost-gap steps", report.non_monotone_steps()));
        }
        Ok(Report {
            results: json!({
                "rows": report.rows,
                "cost_gaps": report.cost_gaps,
                "obstacle_cost": report.obstacle_cost,
                "non_monotone_steps": report.non_monotone_steps(),
            }),
            failed,
        })
    })())
}

pub fn grad_check(ctx: &Context) -> Result<(), Failure> {
    ctx.finish((|| {
        let s = &ctx.scenario;
        let g = &s.grad_check;
        let (cfg, solver) = ctx.model()?;
        let init = s.initial_state()?;
        let cost = s.cost_config(&cfg)?;
        let u = s.control(&cfg);
        let dirs = random_directions(&cfg, g.directions, s.seed);
        let report = fd_gradient_oracle(&solver, &init, &cost, &u, &dirs, g.eps, g.newton_tol)?;
        ctx.writer.write_text("grad_check.csv", |w| report.write_csv(w))?;
        let mut failed = Vec::new();
        if report.max_rel_discrete() > g.tol {
            failed.push(format!("discrete gradient mismatch {:.3e} above {:e}", report.max_rel_discrete(), g.tol));
        }
        if !report.all_signs_agree() {
            failed.push("sign disagreement between gradient and finite differences".into());
        }
        Ok(Report {
            results: json!({
                "eps": report.eps,
                "max_rel_discrete": report.max_rel_discrete(),
                "max_rel_continuous": report.max_rel_continuous(),
                "rows": report.rows,
            }),
            failed,
        })
    })())
}

pub fn oracle(ctx: &Context) -> Result<(), Failure> {
    ctx.finish((|| {
        let s = ctx.scenario.oracle_scenario()?;
        let cfg = s.model()?;
        let solver = StateSolver::new(cfg.clone())?;
        let report = compare_with_brute_force(
            &solver,
            &s.initial_state()?,
            &s.cost_config(&cfg)?,
            &s.constraints()?,
            s.oracle.pieces,
            s.oracle.grid,
            s.oracle.zoom_levels,
        )?;
        ctx.writer.write_json("oracle.json", &report)?;
        let mut failed = Vec::new();
        if report.rel_gap > s.oracle.rel_tol {
            failed.push(format!("relative cost gap {:.3e} above {}", report.rel_gap, s.oracle.rel_tol));
        }
        Ok(Report { results: serde_json::to_value(&report)?, failed })
    })())
}
