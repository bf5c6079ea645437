//! Deep-quench rate fits, two-run perturbation tables and time-step
//! self-convergence.

use rayon::prelude::*;
use serde::Serialize;

use super::norms::{NormKind, NormSuite};
use crate::error::{Error, Result};
use crate::model::{ControlTrajectory, InitialState, Nonlinearity};
use crate::state::{StateSolver, StateTrajectory};

/// Least-squares power law `e = C p^slope` through `(parameter, error)` samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    /// `C` of the least-squares line.
    pub intercept_constant: f64,
    /// `e(p_0) / sqrt(p_0)` at the coarsest sample.
    pub k2: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

impl RateFit {
    /// Fits on all samples but the first (coarsest), which is treated as pre-asymptotic.
    pub fn fit(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 4 {
            return Err(Error::Config(format!("rate fit needs at least 4 samples, got {}", samples.len())));
        }
        if samples.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(Error::Config("rate fit parameters must be strictly decreasing".into()));
        }
        if let Some(&(_, e)) = samples.iter().find(|(p, e)| !(*p > 0.0) || !(*e > 0.0)) {
            return Err(Error::Domain { what: "rate fit error sample", value: e });
        }
        let pts: Vec<(f64, f64)> = samples[1..].iter().map(|(p, e)| (p.ln(), e.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        let residual = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
        let (p0, e0) = samples[0];
        Ok(Self { k2: e0 / p0.sqrt(), samples, slope, intercept_constant: icpt.exp(), residual })
    }

    /// `max_i e_i / (k2 sqrt(p_i))`; bounded by a margin when the half-order bound holds.
    pub fn max_ratio(&self) -> f64 {
        self.samples.iter().map(|(p, e)| e / (self.k2 * p.sqrt())).fold(0.0, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub c0_l2: f64,
    pub l2_h1: f64,
    pub error: f64,
    pub max_abs: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaRateReport {
    pub rows: Vec<AlphaRow>,
    pub fit: Option<RateFit>,
    pub oracle_lambda: f64,
    /// Distance between the obstacle oracle at `oracle_lambda` and at a tenth of it.
    pub oracle_sensitivity: f64,
    /// First solver failure; `rows` then holds the samples before it.
    pub failure: Option<String>,
}

impl AlphaRateReport {
    pub fn write_csv<W: std::io::Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "alpha,c0_l2,l2_h1,error,max_abs,newton_iterations")?;
        for r in &self.rows {
            writeln!(out, "{:e},{:e},{:e},{:e},{:e},{}", r.alpha, r.c0_l2, r.l2_h1, r.error, r.max_abs, r.newton_iterations)?;
        }
        Ok(())
    }
}

fn difference(a: &StateTrajectory, b: &StateTrajectory) -> Vec<Vec<f64>> {
    a.y.iter()
        .zip(&b.y)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

/// Errors `||S_alpha(u) - S_0(u)||` in `C0L2 + L2H1` against the Moreau-Yosida
/// obstacle solve at `oracle_lambda`, with a log-log fit over `alphas`.
pub fn alpha_rate_study(
    solver: &StateSolver,
    init: &InitialState,
    u: &ControlTrajectory,
    alphas: &[f64],
    oracle_lambda: f64,
) -> Result<AlphaRateReport> {
    let suite = NormSuite::new(solver.config())?;
    let obstacle = |lambda: f64| -> Result<StateTrajectory> {
        let s = solver.with_nonlinearity(Nonlinearity::Obstacle { lambda })?;
        Ok(s.solve(init, u)?.0)
    };
    let (oracle, finer) = rayon::join(|| obstacle(oracle_lambda), || obstacle(0.1 * oracle_lambda));
    let oracle = oracle?;
    let oracle_sensitivity = suite.state_error(&difference(&oracle, &finer?))?;

    let results: Vec<Result<AlphaRow>> = alphas
        .par_iter()
        .map(|&alpha| {
            let s = StateSolver::new(solver.config().with_alpha(alpha))?;
            let (traj, _) = s.solve(init, u)?;
            let d = difference(&traj, &oracle);
            let c0_l2 = suite.norm(NormKind::C0L2, &d)?;
            let l2_h1 = suite.norm(NormKind::L2H1, &d)?;
            Ok(AlphaRow {
                alpha,
                c0_l2,
                l2_h1,
                error: c0_l2 + l2_h1,
                max_abs: traj.max_abs(),
                newton_iterations: traj.total_newton_iterations(),
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failure = None;
    for (alpha, r) in alphas.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failure = Some(format!("alpha = {alpha}: {e}"));
                break;
            }
        }
    }
    let fit = if failure.is_none() {
        Some(RateFit::fit(rows.iter().map(|r| (r.alpha, r.error)).collect())?)
    } else {
        None
    };
    Ok(AlphaRateReport { rows, fit, oracle_lambda, oracle_sensitivity, failure })
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub alpha: f64,
    pub control: ControlTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub alpha1: f64,
    pub alpha2: f64,
    pub state_c0_l2: f64,
    pub state_l2_h1: f64,
    /// `max_t || int_0^t A^r (mu_1 - mu_2) ||`
    pub mu_antiderivative: f64,
    pub control_gap: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl PerturbationRow {
    /// `lhs / rhs`, zero when both sides vanish.
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn compare_trajectories(
    solver: &StateSolver,
    suite: &NormSuite,
    (a1, t1, u1): (f64, &StateTrajectory, &ControlTrajectory),
    (a2, t2, u2): (f64, &StateTrajectory, &ControlTrajectory),
) -> Result<PerturbationRow> {
    let cfg = solver.config();
    let d = difference(t1, t2);
    let state_c0_l2 = suite.norm(NormKind::C0L2, &d)?;
    let state_l2_h1 = suite.norm(NormKind::L2H1, &d)?;
    let mut acc = vec![0.0; d[0].len()];
    let mut mu_antiderivative = 0.0_f64;
    for (m1, m2) in t1.mu.iter().zip(&t2.mu) {
        acc.iter_mut().zip(m1.iter().zip(m2)).for_each(|(a, (x, y))| *a += cfg.dt * (x - y));
        let ar = cfg.basis_a.power_grid(&acc, cfg.r);
        mu_antiderivative = mu_antiderivative.max(cfg.domain().norm(&ar));
    }
    let control_gap = u1.axpy(-1.0, u2).norm();
    let lhs = state_c0_l2 + state_l2_h1 + mu_antiderivative;
    let rhs = (a1 - a2).abs().sqrt() + control_gap;
    Ok(PerturbationRow { alpha1: a1, alpha2: a2, state_c0_l2, state_l2_h1, mu_antiderivative, control_gap, lhs, rhs })
}

/// Both sides of the two-parameter stability estimate for one pair of runs.
pub fn compare_two_runs(
    solver: &StateSolver,
    init: &InitialState,
    first: &RunSpec,
    second: &RunSpec,
) -> Result<PerturbationRow> {
    let suite = NormSuite::new(solver.config())?;
    let run = |r: &RunSpec| -> Result<StateTrajectory> {
        Ok(StateSolver::new(solver.config().with_alpha(r.alpha))?.solve(init, &r.control)?.0)
    };
    let (t1, t2) = rayon::join(|| run(first), || run(second));
    compare_trajectories(solver, &suite, (first.alpha, &t1?, &first.control), (second.alpha, &t2?, &second.control))
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoParameterTable {
    pub rows: Vec<PerturbationRow>,
}

impl TwoParameterTable {
    /// Smallest constant that bounds every row.
    pub fn k2(&self) -> f64 {
        self.rows.iter().map(PerturbationRow::ratio).fold(0.0, f64::max)
    }

    pub fn holds_with(&self, k2: f64) -> bool {
        self.rows.iter().all(|r| r.lhs <= k2 * r.rhs)
    }

    pub fn write_csv<W: std::io::Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "alpha1,alpha2,state_c0_l2,state_l2_h1,mu_antiderivative,control_gap,lhs,rhs,ratio")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.alpha1, r.alpha2, r.state_c0_l2, r.state_l2_h1, r.mu_antiderivative, r.control_gap, r.lhs, r.rhs, r.ratio()
            )?;
        }
        Ok(())
    }
}

/// Evaluates the stability estimate on each pair of runs, in parallel.
pub fn two_parameter_study(
    solver: &StateSolver,
    init: &InitialState,
    pairs: &[(RunSpec, RunSpec)],
) -> Result<TwoParameterTable> {
    let rows = pairs
        .par_iter()
        .map(|(a, b)| compare_two_runs(solver, init, a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoParameterTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtConvergence {
    pub dts: Vec<f64>,
    /// `||y_{dt_k} - y_{dt_{k+1}}||_{C0L2}` on the coarser grid.
    pub differences: Vec<f64>,
    /// `log2(d_k / d_{k+1})`
    pub orders: Vec<f64>,
}

impl DtConvergence {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Self-convergence in `C0L2` over successively halved time steps.
pub fn dt_self_convergence<F>(solver: &StateSolver, init: &InitialState, control: F, dts: &[f64]) -> Result<DtConvergence>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    if dts.len() < 3 || dts.windows(2).any(|w| (w[0] / w[1] - 2.0).abs() > 1e-9) {
        return Err(Error::Config("need at least three successively halved time steps".into()));
    }
    let runs = dts
        .par_iter()
        .map(|&dt| {
            let cfg = solver.config().with_dt(dt);
            cfg.validate()?;
            let u = ControlTrajectory::from_fn(&cfg, &control);
            Ok(StateSolver::new(cfg)?.solve(init, &u)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let domain = solver.config().domain();
    let differences: Vec<f64> = runs
        .windows(2)
        .map(|w| {
            w[0].y
                .iter()
                .enumerate()
                .map(|(m, y)| {
                    let fine = &w[1].y[2 * m];
                    let d: Vec<f64> = y.iter().zip(fine).map(|(a, b)| a - b).collect();
                    domain.norm(&d)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let orders = differences.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(DtConvergence { dts: dts.to_vec(), differences, orders })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_is_recovered() {
        let samples: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025].iter().map(|&a: &f64| (a, 3.0 * a.powf(0.7))).collect();
        let fit = RateFit::fit(samples).unwrap();
        assert!((fit.slope - 0.7).abs() < 1e-12);
        assert!((fit.intercept_constant - 3.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!(fit.is_monotone());
        // slope above one half keeps every sample under the coarse-sample constant
        assert!(fit.max_ratio() <= 1.0 + 1e-12);
    }

    #[test]
    fn fit_preconditions() {
        assert!(RateFit::fit(vec![(0.2, 1.0), (0.1, 0.5), (0.05, 0.2)]).is_err());
        assert!(RateFit::fit(vec![(0.1, 1.0), (0.2, 0.5), (0.05, 0.2), (0.01, 0.1)]).is_err());
        assert!(RateFit::fit(vec![(0.2, 1.0), (0.1, 0.0), (0.05, 0.2), (0.01, 0.1)]).is_err());
    }
}
