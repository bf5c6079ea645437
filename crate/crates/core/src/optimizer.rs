//! Tracking cost, admissible set, projected gradient descent and the
//! deep-quench continuation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::discrete_gradient;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{trapezoid_weights, ControlTrajectory, InitialState, ModelConfig, Nonlinearity};
use crate::state::{StateSolver, StateTrajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Target at the final time (grid values).
    pub y_omega: Vec<f64>,
    /// Space-time target, one grid field per time node.
    pub y_q: Vec<Vec<f64>>,
}

impl CostConfig {
    pub fn new(betas: [f64; 3], y_omega: Vec<f64>, y_q: Vec<Vec<f64>>) -> Result<Self> {
        if betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("cost weights must be nonnegative".into()));
        }
        if betas.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("at least one cost weight must be positive".into()));
        }
        if y_q.iter().any(|v| v.len() != y_omega.len()) {
            return Err(Error::GridMismatch("targets on different spatial grids".into()));
        }
        if y_omega.iter().chain(y_q.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost targets"));
        }
        Ok(Self {
            beta1: betas[0],
            beta2: betas[1],
            beta3: betas[2],
            y_omega,
            y_q,
        })
    }

    /// Spatially and temporally constant targets.
    pub fn constant_targets(cfg: &ModelConfig, betas: [f64; 3], y_omega: f64, y_q: f64) -> Result<Self> {
        let n = cfg.domain().len();
        Self::new(betas, vec![y_omega; n], vec![vec![y_q; n]; cfg.steps() + 1])
    }

    pub fn check_state(&self, state: &StateTrajectory) -> Result<()> {
        if state.y.len() != self.y_q.len() || state.y[0].len() != self.y_omega.len() {
            return Err(Error::GridMismatch(format!(
                "targets have {} x {} nodes, state has {} x {}",
                self.y_q.len(),
                self.y_omega.len(),
                state.y.len(),
                state.y[0].len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlConstraints {
    pub rho1: f64,
    pub rho2: f64,
}

impl ControlConstraints {
    pub fn new(rho1: f64, rho2: f64) -> Result<Self> {
        if !(rho1 > 0.0 && rho2 > 0.0) || rho1.is_nan() || rho2.is_nan() {
            return Err(Error::Config("rho1 and rho2 must be positive".into()));
        }
        Ok(Self { rho1, rho2 })
    }

    pub fn is_feasible(&self, u: &ControlTrajectory) -> bool {
        u.max_abs() <= self.rho1 && u.h1_norm() <= self.rho2 * (1.0 + 1e-10)
    }
}

/// `beta1/2 ||y(T) - y_Omega||^2 + beta2/2 int ||y - y_Q||^2 + beta3/2 int ||u||^2`.
pub fn evaluate_cost(state: &StateTrajectory, u: &ControlTrajectory, cost: &CostConfig) -> Result<f64> {
    cost.check_state(state)?;
    if u.values().len() != state.y.len() || u.points() != state.y[0].len() {
        return Err(Error::GridMismatch("control and state grids differ".into()));
    }
    let cell = u.cell();
    let w = trapezoid_weights(state.steps(), u.dt());
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let terminal = cell * sq(state.final_state(), &cost.y_omega);
    let tracking: f64 = state
        .y
        .iter()
        .zip(&cost.y_q)
        .zip(&w)
        .map(|((y, t), wm)| wm * cell * sq(y, t))
        .sum();
    Ok(0.5 * cost.beta1 * terminal + 0.5 * cost.beta2 * tracking + 0.5 * cost.beta3 * u.inner(u))
}

/// The plain cost plus `1/2 ||u - u_ref||^2` in `L2(Q)`.
pub fn evaluate_adapted_cost(
    state: &StateTrajectory,
    u: &ControlTrajectory,
    cost: &CostConfig,
    u_ref: &ControlTrajectory,
) -> Result<f64> {
    u.check_compatible(u_ref)?;
    let d = u.axpy(-1.0, u_ref);
    Ok(evaluate_cost(state, u, cost)? + 0.5 * d.inner(&d))
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub control: ControlTrajectory,
    pub rho2_active: bool,
}

/// Clamps to `[-rho1, rho1]`; if the discrete `H1(0,T;L2)` norm then exceeds
/// `rho2`, scales the trajectory back onto the ball and clamps once more. This
/// is a feasibility map, not the metric projection onto the intersection.
pub fn project_admissible(u: &ControlTrajectory, constraints: &ControlConstraints) -> Projection {
    let rho1 = constraints.rho1;
    let clamped = u.map(|v| v.clamp(-rho1, rho1));
    let norm = clamped.h1_norm();
    if norm > constraints.rho2 {
        let scaled = clamped.scaled(constraints.rho2 / norm);
        Projection {
            control: scaled.map(|v| v.clamp(-rho1, rho1)),
            rho2_active: true,
        }
    } else {
        Projection {
            control: clamped,
            rho2_active: false,
        }
    }
}

/// The reduced problem `u -> J(S_alpha(u), u)`, optionally with the adapted term.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub solver: StateSolver,
    pub init: InitialState,
    pub cost: CostConfig,
    pub constraints: ControlConstraints,
    pub u_ref: Option<ControlTrajectory>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    /// The minimized functional: adapted if `u_ref` is set, plain otherwise.
    pub objective: f64,
    pub state: StateTrajectory,
}

impl ReducedProblem {
    pub fn evaluate(&self, u: &ControlTrajectory) -> Result<Evaluation> {
        let (state, _) = self.solver.solve(&self.init, u)?;
        let cost = evaluate_cost(&state, u, &self.cost)?;
        let objective = match &self.u_ref {
            Some(r) => evaluate_adapted_cost(&state, u, &self.cost, r)?,
            None => cost,
        };
        Ok(Evaluation { cost, objective, state })
    }

    pub fn gradient(&self, u: &ControlTrajectory, state: &StateTrajectory) -> Result<ControlTrajectory> {
        discrete_gradient(&self.solver, state, u, &self.cost, self.u_ref.as_ref())
    }

    /// `|| u - P(u - g) ||`, the projected-gradient stationarity measure at unit step.
    pub fn stationarity(&self, u: &ControlTrajectory, g: &ControlTrajectory) -> f64 {
        let p = project_admissible(&u.axpy(-1.0, g), &self.constraints).control;
        u.axpy(-1.0, &p).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stationarity tolerance; `None` means `1e-6 (1 + ||g_0||)`.
    pub tol_stat: Option<f64>,
    pub armijo_c: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub min_step: f64,
    /// Barzilai-Borwein trial steps after the first iteration.
    pub bb_steps: bool,
    pub probes: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol_stat: None,
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            min_step: 1e-12,
            bb_steps: true,
            probes: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub cost: f64,
    pub stationarity: f64,
    pub gradient_norm: f64,
    /// Accepted step length (0 for the final record).
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stationary,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViCertificate {
    /// `min_v int int g (v - u)` over the probes.
    pub min_residual: f64,
    /// `min_v int int g (v - u) / (1 + ||v - u||)`.
    pub min_scaled_residual: f64,
    pub probes: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub control: ControlTrajectory,
    pub state: StateTrajectory,
    pub gradient: ControlTrajectory,
    pub cost: f64,
    pub objective: f64,
    pub history: Vec<IterationRecord>,
    pub stationarity: f64,
    pub tol_stat: f64,
    pub termination: Termination,
    pub vi: ViCertificate,
    pub rho2_active: bool,
}

impl OptimizationReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Stationary
    }

    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Probes: constant shifts, sign flips and random feasible points.
pub fn vi_certificate(
    u: &ControlTrajectory,
    g: &ControlTrajectory,
    constraints: &ControlConstraints,
    probes: usize,
    seed: u64,
) -> ViCertificate {
    let rho1 = constraints.rho1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(probes);
    for k in 0..probes {
        let v = match k {
            0..=7 => {
                let shifts = [0.1, 0.5, 1.0, 2.0];
                let c = shifts[k / 2] * rho1 * if k % 2 == 0 { 1.0 } else { -1.0 };
                u.map(|x| x + c)
            }
            8 => u.scaled(-1.0),
            9 => {
                let mut v = u.clone();
                for slab in v.values_mut() {
                    if rng.gen_bool(0.5) {
                        slab.iter_mut().for_each(|x| *x = -*x);
                    }
                }
                v
            }
            _ => {
                let mut v = u.clone();
                v.values_mut().iter_mut().flatten().for_each(|x| *x = rng.gen_range(-rho1..=rho1));
                v
            }
        };
        candidates.push(project_admissible(&v, constraints).control);
    }
    let mut min_residual = f64::INFINITY;
    let mut min_scaled = f64::INFINITY;
    for v in &candidates {
        let d = v.axpy(-1.0, u);
        let r = g.inner(&d);
        min_residual = min_residual.min(r);
        min_scaled = min_scaled.min(r / (1.0 + d.norm()));
    }
    ViCertificate {
        min_residual,
        min_scaled_residual: min_scaled,
        probes: candidates.len(),
    }
}

/// Largest `|u + q / beta3| = |g| / beta3` over grid points where the box is
/// inactive (by a relative margin); `NaN` if `beta3 = 0`.
pub fn interior_stationarity(
    u: &ControlTrajectory,
    g: &ControlTrajectory,
    cost: &CostConfig,
    constraints: &ControlConstraints,
) -> f64 {
    if cost.beta3 == 0.0 {
        return f64::NAN;
    }
    let limit = constraints.rho1 * (1.0 - 1e-8);
    u.values()
        .iter()
        .flatten()
        .zip(g.values().iter().flatten())
        .filter(|(x, _)| x.abs() < limit)
        .map(|(_, gi)| gi.abs() / cost.beta3)
        .fold(0.0, f64::max)
}

/// Projected gradient descent with Armijo backtracking.
pub fn projected_gradient(
    problem: &ReducedProblem,
    u_start: &ControlTrajectory,
    options: &OptimizerOptions,
) -> Result<OptimizationReport> {
    u_start.check_model(problem.solver.config())?;
    let proj = project_admissible(u_start, &problem.constraints);
    let mut rho2_active = proj.rho2_active;
    let mut u = proj.control;
    let mut eval = problem.evaluate(&u)?;
    let mut g = problem.gradient(&u, &eval.state)?;
    let tol = options.tol_stat.unwrap_or(1e-6 * (1.0 + g.norm()));
    let mut history = Vec::new();
    let mut trial = options.initial_step;
    let mut termination = Termination::MaxIterations;

    for iteration in 0..=options.max_iter {
        let stat = problem.stationarity(&u, &g);
        history.push(IterationRecord {
            iteration,
            objective: eval.objective,
            cost: eval.cost,
            stationarity: stat,
            gradient_norm: g.norm(),
            step: 0.0,
        });
        if stat <= tol {
            termination = Termination::Stationary;
            break;
        }
        if iteration == options.max_iter {
            break;
        }
        let mut s = trial;
        let accepted = loop {
            if s < options.min_step {
                break None;
            }
            let p = project_admissible(&u.axpy(-s, &g), &problem.constraints);
            let d = p.control.axpy(-1.0, &u);
            let slope = g.inner(&d);
            match problem.evaluate(&p.control) {
                Ok(e) if e.objective <= eval.objective + options.armijo_c * slope && slope < 0.0 => {
                    break Some((p, e, s));
                }
                Ok(_) => {}
                Err(err) if err.is_solver_failure() => {}
                Err(err) => return Err(err),
            }
            s *= options.shrink;
        };
        let Some((p, e, s)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let g_new = problem.gradient(&p.control, &e.state)?;
        if options.bb_steps {
            let sk = p.control.axpy(-1.0, &u);
            let yk = g_new.axpy(-1.0, &g);
            let sy = sk.inner(&yk);
            trial = if sy > 0.0 {
                (sk.inner(&sk) / sy).clamp(1e-8, 1e8)
            } else {
                options.initial_step
            };
        }
        history.last_mut().expect("record").step = s;
        rho2_active |= p.rho2_active;
        u = p.control;
        eval = e;
        g = g_new;
    }

    let vi = vi_certificate(&u, &g, &problem.constraints, options.probes, options.seed);
    let stationarity = history.last().map(|r| r.stationarity).unwrap_or(f64::NAN);
    Ok(OptimizationReport {
        control: u,
        state: eval.state,
        gradient: g,
        cost: eval.cost,
        objective: eval.objective,
        history,
        stationarity,
        tol_stat: tol,
        termination,
        vi,
        rho2_active,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuationOptions {
    pub optimizer: OptimizerOptions,
    /// Use the adapted cost with the previous solution as reference.
    pub adapted: bool,
    pub oracle_lambda: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerOptions::default(),
            adapted: true,
            oracle_lambda: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuationRow {
    pub alpha: f64,
    pub cost: f64,
    pub adapted_cost: f64,
    pub grad_norm: f64,
    pub vi_residual: f64,
    /// `||S_alpha(u) - S_0(u)||_{C0 L2}` at this alpha's control.
    pub state_gap: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub rows: Vec<ContinuationRow>,
    pub controls: Vec<ControlTrajectory>,
    /// `J(S_0(u_final), u_final)` from the obstacle oracle.
    pub obstacle_cost: f64,
    /// `|adapted_cost_alpha - obstacle_cost|` per alpha.
    pub cost_gaps: Vec<f64>,
    /// Inner failure that stopped the sweep, if any.
    pub failure: Option<String>,
}

impl ContinuationReport {
    pub fn final_control(&self) -> Option<&ControlTrajectory> {
        self.controls.last()
    }

    /// Increases of `cost_gaps` after the first step.
    pub fn non_monotone_steps(&self) -> usize {
        self.cost_gaps.windows(2).skip(1).filter(|w| w[1] > w[0]).count()
    }

    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "alpha,cost,adapted_cost,grad_norm,vi_residual,state_gap,iters")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                r.alpha, r.cost, r.adapted_cost, r.grad_norm, r.vi_residual, r.state_gap, r.iters
            )?;
        }
        Ok(())
    }
}

fn c0l2_gap(a: &StateTrajectory, b: &StateTrajectory, cell: f64) -> f64 {
    a.y.iter()
        .zip(&b.y)
        .map(|(x, y)| {
            let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            (cell * dot(&d, &d)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Solves the (adapted) control problem for each alpha of a strictly decreasing
/// sequence, warm-starting from the previous solution, and compares with the
/// obstacle problem at the final control.
pub fn deep_quench_continuation(
    solver: &StateSolver,
    init: &InitialState,
    cost: &CostConfig,
    constraints: &ControlConstraints,
    alphas: &[f64],
    u_start: &ControlTrajectory,
    options: &ContinuationOptions,
) -> Result<ContinuationReport> {
    if alphas.is_empty() || alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("alpha sequence must be nonempty and strictly decreasing".into()));
    }
    let phi = match solver.config().nonlinearity {
        Nonlinearity::Quench { phi, .. } => phi,
        Nonlinearity::Obstacle { .. } => crate::potentials::PhiKind::Linear,
    };
    let oracle = solver.with_nonlinearity(Nonlinearity::Obstacle { lambda: options.oracle_lambda })?;
    let cell = solver.config().domain().cell_volume();
    let mut rows = Vec::new();
    let mut controls: Vec<ControlTrajectory> = Vec::new();
    let mut failure = None;
    let mut u_prev = u_start.clone();

    for (i, &alpha) in alphas.iter().enumerate() {
        let problem = ReducedProblem {
            solver: solver.with_nonlinearity(Nonlinearity::Quench { alpha, phi })?,
            init: init.clone(),
            cost: cost.clone(),
            constraints: *constraints,
            u_ref: (options.adapted && i > 0).then(|| u_prev.clone()),
        };
        let report = match projected_gradient(&problem, &u_prev, &options.optimizer) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(format!("alpha = {alpha}: {e}"));
                break;
            }
        };
        let obstacle_state = match oracle.solve(init, &report.control) {
            Ok((s, _)) => s,
            Err(e) => {
                failure = Some(format!("obstacle oracle at alpha = {alpha}: {e}"));
                break;
            }
        };
        rows.push(ContinuationRow {
            alpha,
            cost: report.cost,
            adapted_cost: report.objective,
            grad_norm: report.stationarity,
            vi_residual: report.vi.min_residual,
            state_gap: c0l2_gap(&report.state, &obstacle_state, cell),
            iters: report.iterations(),
            converged: report.converged(),
        });
        u_prev = report.control.clone();
        controls.push(report.control);
    }

    let (obstacle_cost, cost_gaps) = match controls.last() {
        Some(u) => {
            let (s, _) = oracle.solve(init, u)?;
            let j = evaluate_cost(&s, u, cost)?;
            (j, rows.iter().map(|r| (r.adapted_cost - j).abs()).collect())
        }
        None => (f64::NAN, Vec::new()),
    };
    Ok(ContinuationReport {
        rows,
        controls,
        obstacle_cost,
        cost_gaps,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NewtonOptions;
    use crate::potentials::{PhiKind, SmoothPart};
    use crate::spectral::{BasisKind, Domain, EigenBasis};
    use std::f64::consts::PI;

    fn cfg() -> ModelConfig {
        let d = Domain::interval(1.0, 8).unwrap();
        let b = EigenBasis::shared(d, BasisKind::LaplacianNeumann).unwrap();
        ModelConfig {
            basis_a: b.clone(),
            basis_b: b,
            r: 0.5,
            sigma: 0.5,
            tau: 0.1,
            dt: 0.01,
            t_final: 0.05,
            smooth: SmoothPart::default(),
            nonlinearity: Nonlinearity::Quench { alpha: 0.1, phi: PhiKind::Linear },
            newton: NewtonOptions::default(),
        }
    }

    #[test]
    fn cost_examples() {
        let c = cfg();
        let s = StateSolver::new(c.clone()).unwrap();
        let init = InitialState::new(vec![0.0; 8]).unwrap();
        let u = ControlTrajectory::zeros(&c);
        let (traj, _) = s.solve(&init, &u).unwrap();
        let zero = CostConfig::constant_targets(&c, [1.0, 1.0, 1.0], 0.0, 0.0).unwrap();
        assert_eq!(evaluate_cost(&traj, &u, &zero).unwrap(), 0.0);
        // ||y(T) - y_Omega|| = 2 on |Omega| = 1
        let term = CostConfig::constant_targets(&c, [1.0, 0.0, 0.0], 2.0, 0.0).unwrap();
        assert!((evaluate_cost(&traj, &u, &term).unwrap() - 2.0).abs() < 1e-14);
        assert!(CostConfig::constant_targets(&c, [0.0, 0.0, 0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn adapted_cost_examples() {
        let c = cfg();
        let s = StateSolver::new(c.clone()).unwrap();
        let init = InitialState::from_fn(c.domain(), |x| 0.2 * (PI * x[0]).cos()).unwrap();
        let u = ControlTrajectory::constant(&c, 0.3);
        let (traj, _) = s.solve(&init, &u).unwrap();
        let cost = CostConfig::constant_targets(&c, [1.0, 1.0, 0.01], 0.1, 0.0).unwrap();
        let plain = evaluate_cost(&traj, &u, &cost).unwrap();
        assert_eq!(evaluate_adapted_cost(&traj, &u, &cost, &u).unwrap(), plain);
        let zero = ControlTrajectory::zeros(&c);
        let adapted = evaluate_adapted_cost(&traj, &u, &cost, &zero).unwrap();
        // 1/2 c^2 |Q| with |Q| = 0.05
        assert!((adapted - plain - 0.5 * 0.09 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let c = cfg();
        let k = ControlConstraints::new(1.0, 1e6).unwrap();
        let u = ControlTrajectory::constant(&c, 2.0);
        let p = project_admissible(&u, &k);
        assert!(p.control.values().iter().flatten().all(|v| *v == 1.0));
        assert!(!p.rho2_active);
        let again = project_admissible(&p.control, &k);
        assert_eq!(again.control, p.control);
        let tight = ControlConstraints::new(1.0, 1e-3).unwrap();
        let v = ControlTrajectory::from_fn(&c, |t, x| (7.0 * t).sin() + x[0]);
        let p = project_admissible(&v, &tight);
        assert!(p.rho2_active);
        assert!(p.control.h1_norm() <= 1e-3 * (1.0 + 1e-10));
        assert!(tight.is_feasible(&p.control));
    }

    #[test]
    fn pure_control_cost_converges_to_zero() {
        let c = cfg();
        let problem = ReducedProblem {
            solver: StateSolver::new(c.clone()).unwrap(),
            init: InitialState::from_fn(c.domain(), |x| 0.2 * (PI * x[0]).cos()).unwrap(),
            cost: CostConfig::constant_targets(&c, [0.0, 0.0, 0.5], 0.0, 0.0).unwrap(),
            constraints: ControlConstraints::new(2.0, 1e6).unwrap(),
            u_ref: None,
        };
        let start = ControlTrajectory::from_fn(&c, |t, x| t + x[0]);
        let rep = projected_gradient(&problem, &start, &OptimizerOptions::default()).unwrap();
        assert!(rep.converged());
        assert!(rep.control.max_abs() < 1e-5);
        assert!(rep.history.windows(2).all(|w| w[1].objective < w[0].objective));
    }
}
