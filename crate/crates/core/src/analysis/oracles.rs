//! Independent checks of the gradient and of the optimizer: central finite
//! differences of the reduced cost, and exhaustive search over a small
//! parametrized control family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{assemble_adjoint_data, continuous_gradient, discrete_gradient, solve_adjoint};
use crate::error::{Error, Result};
use crate::model::{ControlTrajectory, InitialState, ModelConfig};
use crate::optimizer::{evaluate_cost, ControlConstraints, CostConfig};
use crate::state::StateSolver;

/// `count` directions with iid uniform `[-1, 1]` nodal values.
pub fn random_directions(cfg: &ModelConfig, count: usize, seed: u64) -> Vec<ControlTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut d = ControlTrajectory::zeros(cfg);
            for slab in d.values_mut() {
                slab.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..=1.0));
            }
            d
        })
        .collect()
}

fn relative(a: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        (a - reference).abs() / reference.abs()
    } else {
        a.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdRow {
    pub finite_difference: f64,
    pub discrete: f64,
    pub continuous: f64,
    pub rel_discrete: f64,
    pub rel_continuous: f64,
    pub sign_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub eps: f64,
    pub rows: Vec<FdRow>,
}

impl FdReport {
    pub fn max_rel_discrete(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_discrete).fold(0.0, f64::max)
    }

    pub fn max_rel_continuous(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_continuous).fold(0.0, f64::max)
    }

    pub fn all_signs_agree(&self) -> bool {
        self.rows.iter().all(|r| r.sign_agrees)
    }

    pub fn write_csv<W: std::io::Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "direction,fd,discrete,continuous,rel_discrete,rel_continuous,sign_agrees")?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{i},{:e},{:e},{:e},{:e},{:e},{}",
                r.finite_difference, r.discrete, r.continuous, r.rel_discrete, r.rel_continuous, r.sign_agrees
            )?;
        }
        Ok(())
    }
}

/// Compares `<g, d>` from both adjoint paths with the central difference
/// `(J(u + eps d) - J(u - eps d)) / (2 eps)` of the plain reduced cost.
/// All solves use Newton tolerance `newton_tol`.
pub fn fd_gradient_oracle(
    solver: &StateSolver,
    init: &InitialState,
    cost: &CostConfig,
    u: &ControlTrajectory,
    directions: &[ControlTrajectory],
    eps: f64,
    newton_tol: f64,
) -> Result<FdReport> {
    if !(eps > 0.0) {
        return Err(Error::Domain { what: "finite-difference step", value: eps });
    }
    let solver = solver.with_newton_tol(newton_tol);
    let (state, _) = solver.solve(init, u)?;
    let g_disc = discrete_gradient(&solver, &state, u, cost, None)?;
    let adjoint = solve_adjoint(&assemble_adjoint_data(&state, cost, solver.config())?, &solver)?;
    let g_cont = continuous_gradient(&adjoint, u, cost, None)?;
    let reduced = |v: &ControlTrajectory| -> Result<f64> {
        let (s, _) = solver.solve(init, v)?;
        evaluate_cost(&s, v, cost)
    };
    let rows = directions
        .par_iter()
        .map(|d| {
            let plus = reduced(&u.axpy(eps, d))?;
            let minus = reduced(&u.axpy(-eps, d))?;
            let fd = (plus - minus) / (2.0 * eps);
            let discrete = g_disc.inner(d);
            let continuous = g_cont.inner(d);
            Ok(FdRow {
                finite_difference: fd,
                discrete,
                continuous,
                rel_discrete: relative(discrete, fd),
                rel_continuous: relative(continuous, fd),
                sign_agrees: discrete.signum() == fd.signum() || fd == 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FdReport { eps, rows })
}

/// Controls that are constant in space and piecewise constant in time:
/// time level `m` uses parameter `floor(m k / (M + 1))`.
#[derive(Debug, Clone)]
pub struct PiecewiseControl {
    cfg: ModelConfig,
    pieces: usize,
}

impl PiecewiseControl {
    pub fn new(cfg: &ModelConfig, pieces: usize) -> Result<Self> {
        if pieces == 0 || pieces > cfg.steps() + 1 {
            return Err(Error::Config(format!("{pieces} pieces for {} time levels", cfg.steps() + 1)));
        }
        Ok(Self { cfg: cfg.clone(), pieces })
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn piece_of(&self, m: usize) -> usize {
        m * self.pieces / (self.cfg.steps() + 1)
    }

    pub fn control(&self, theta: &[f64]) -> ControlTrajectory {
        let mut u = ControlTrajectory::zeros(&self.cfg);
        for (m, slab) in u.values_mut().iter_mut().enumerate() {
            let v = theta[self.piece_of(m)];
            slab.iter_mut().for_each(|x| *x = v);
        }
        u
    }

    /// Chain rule: `dJ/dtheta_k = <g, 1_{piece k}>`.
    pub fn reduce_gradient(&self, g: &ControlTrajectory) -> Vec<f64> {
        let w = g.weights();
        let cell = g.cell();
        let mut out = vec![0.0; self.pieces];
        for (m, slab) in g.values().iter().enumerate() {
            out[self.piece_of(m)] += w[m] * cell * slab.iter().sum::<f64>();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub brute_theta: Vec<f64>,
    pub brute_cost: f64,
    pub gradient_theta: Vec<f64>,
    pub gradient_cost: f64,
    pub zero_cost: f64,
    pub evaluations: usize,
    pub gradient_iterations: usize,
    pub rel_gap: f64,
}

fn grid_points(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let dim = lo.len();
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            (0..dim)
                .map(|k| {
                    let i = idx % n;
                    idx /= n;
                    lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Grid search over the box `|theta_k| <= rho1` with `grid` points per axis,
/// followed by `zoom_levels` refinements around the incumbent.
pub fn brute_force_control_oracle(
    solver: &StateSolver,
    init: &InitialState,
    cost: &CostConfig,
    constraints: &ControlConstraints,
    family: &PiecewiseControl,
    grid: usize,
    zoom_levels: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let k = family.pieces();
    let rho = constraints.rho1;
    let eval = |theta: &[f64]| -> Result<f64> {
        let u = family.control(theta);
        let (s, _) = solver.solve(init, &u)?;
        evaluate_cost(&s, &u, cost)
    };
    let mut lo = vec![-rho; k];
    let mut hi = vec![rho; k];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    for _ in 0..=zoom_levels {
        let candidates: Vec<Vec<f64>> = grid_points(&lo, &hi, grid)
            .into_iter()
            .filter(|t| constraints.is_feasible(&family.control(t)))
            .collect();
        evaluations += candidates.len();
        let costs = candidates.par_iter().map(|t| eval(t)).collect::<Result<Vec<_>>>()?;
        for (t, c) in candidates.into_iter().zip(costs) {
            if best.as_ref().is_none_or(|(_, b)| c < *b) {
                best = Some((t, c));
            }
        }
        let (t, _) = best.as_ref().ok_or_else(|| Error::Config("no feasible grid point".into()))?;
        for j in 0..k {
            let h = (hi[j] - lo[j]) / (grid - 1) as f64;
            lo[j] = (t[j] - h).max(-rho);
            hi[j] = (t[j] + h).min(rho);
        }
    }
    let (t, c) = best.expect("at least one level evaluated");
    Ok((t, c, evaluations))
}

/// Projected gradient with Armijo backtracking on the box `|theta_k| <= rho1`,
/// using the chain-rule gradient of the discrete adjoint.
pub fn parametrized_projected_gradient(
    solver: &StateSolver,
    init: &InitialState,
    cost: &CostConfig,
    constraints: &ControlConstraints,
    family: &PiecewiseControl,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64, usize)> {
    let rho = constraints.rho1;
    let project = |t: &[f64]| t.iter().map(|v| v.clamp(-rho, rho)).collect::<Vec<f64>>();
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let u = family.control(theta);
        let (s, _) = solver.solve(init, &u)?;
        let j = evaluate_cost(&s, &u, cost)?;
        let g = discrete_gradient(solver, &s, &u, cost, None)?;
        Ok((j, family.reduce_gradient(&g)))
    };
    let mut theta = vec![0.0; family.pieces()];
    let (mut j, mut g) = eval(&theta)?;
    let mut step = 1.0;
    for it in 0..max_iter {
        let stat: f64 = theta
            .iter()
            .zip(&project(&theta.iter().zip(&g).map(|(t, gi)| t - gi).collect::<Vec<_>>()))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if stat <= tol {
            return Ok((theta, j, it));
        }
        let mut s = step;
        loop {
            let trial = project(&theta.iter().zip(&g).map(|(t, gi)| t - s * gi).collect::<Vec<_>>());
            let dir: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
            let (jt, gt) = eval(&trial)?;
            if jt <= j + 1e-4 * slope {
                theta = trial;
                j = jt;
                g = gt;
                step = (2.0 * s).min(1e8);
                break;
            }
            s *= 0.5;
            if s < 1e-14 {
                return Ok((theta, j, it));
            }
        }
    }
    Ok((theta, j, max_iter))
}

/// Runs the grid search and the parametrized gradient method on the same family.
#[allow(clippy::too_many_arguments)]
pub fn compare_with_brute_force(
    solver: &StateSolver,
    init: &InitialState,
    cost: &CostConfig,
    constraints: &ControlConstraints,
    pieces: usize,
    grid: usize,
    zoom_levels: usize,
) -> Result<OracleReport> {
    let family = PiecewiseControl::new(solver.config(), pieces)?;
    let (brute_theta, brute_cost, evaluations) =
        brute_force_control_oracle(solver, init, cost, constraints, &family, grid, zoom_levels)?;
    let (gradient_theta, gradient_cost, gradient_iterations) =
        parametrized_projected_gradient(solver, init, cost, constraints, &family, 1000, 1e-10)?;
    let u0 = family.control(&vec![0.0; pieces]);
    let zero_cost = evaluate_cost(&solver.solve(init, &u0)?.0, &u0, cost)?;
    let scale = brute_cost.abs().max(f64::MIN_POSITIVE);
    Ok(OracleReport {
        rel_gap: (gradient_cost - brute_cost).abs() / scale,
        brute_theta,
        brute_cost,
        gradient_theta,
        gradient_cost,
        zero_cost,
        evaluations,
        gradient_iterations,
    })
}
