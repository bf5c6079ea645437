//! Adjoint solvers.
//!
//! Two gradient paths are provided. [`discrete_gradient`] differentiates the
//! time-discrete state scheme exactly (transposed Newton Jacobians at the
//! converged iterates). [`solve_adjoint`] discretizes the continuous adjoint
//! system backward in time, and [`continuous_gradient`] turns its `q` into an
//! `L2(Q)` gradient. The two agree up to `O(dt)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, mean};
use crate::model::{trapezoid_weights, ControlTrajectory, ModelConfig, Nonlinearity};
use crate::optimizer::CostConfig;
use crate::state::{StateSolver, StateTrajectory};

/// `psi_2` is evaluated at `|y| <= 1 - PSI2_MARGIN` at most.
pub const PSI2_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct AdjointData {
    pub g1: Vec<f64>,
    pub g2: Vec<Vec<f64>>,
    pub psi1: Vec<Vec<f64>>,
    pub psi2: Vec<Vec<f64>>,
    /// Grid values where `psi_2` had to be capped.
    pub psi2_capped: usize,
}

/// Forms `g1 = beta1 (y(T) - y_Omega)`, `g2 = beta2 (y - y_Q)`,
/// `psi1 = f2''(y)` and `psi2 = phi(alpha) h''(y)`.
pub fn assemble_adjoint_data(state: &StateTrajectory, cost: &CostConfig, cfg: &ModelConfig) -> Result<AdjointData> {
    let s = match cfg.nonlinearity {
        Nonlinearity::Quench { alpha, phi } => phi.eval(alpha),
        Nonlinearity::Obstacle { .. } => {
            return Err(Error::Config("the adjoint system needs a quench parameter alpha".into()))
        }
    };
    cost.check_state(state)?;
    let last = state.steps();
    let g1 = state.y[last]
        .iter()
        .zip(&cost.y_omega)
        .map(|(y, t)| cost.beta1 * (y - t))
        .collect();
    let g2 = state
        .y
        .iter()
        .zip(&cost.y_q)
        .map(|(y, t)| y.iter().zip(t).map(|(a, b)| cost.beta2 * (a - b)).collect())
        .collect();
    let psi1 = state
        .y
        .iter()
        .map(|y| y.iter().map(|&v| cfg.smooth.second(v)).collect())
        .collect();
    let bound = 1.0 - PSI2_MARGIN;
    let mut capped = 0;
    let psi2 = state
        .y
        .iter()
        .map(|y| {
            y.iter()
                .map(|&v| {
                    let w = if v.abs() >= bound {
                        capped += 1;
                        bound
                    } else {
                        v
                    };
                    s * 2.0 / (1.0 - w * w)
                })
                .collect()
        })
        .collect();
    Ok(AdjointData {
        g1,
        g2,
        psi1,
        psi2,
        psi2_capped: capped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjointState {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    /// `Lambda = psi2 q`.
    pub lambda_mult: Vec<Vec<f64>>,
    /// `mean(p + tau q)(t_m)`; identically zero when `lambda_1(A) > 0`.
    pub mean_p: Vec<f64>,
    /// `max |(p + tau q)(T) - g1|`.
    pub terminal_residual: f64,
}

impl AdjointState {
    pub fn max_abs_mean_q(&self) -> f64 {
        self.q.iter().map(|q| mean(q).abs()).fold(0.0, f64::max)
    }

    pub fn sup_norm_q(&self, cell: f64) -> f64 {
        self.q.iter().map(|q| (cell * dot(q, q)).sqrt()).fold(0.0, f64::max)
    }

    /// `int int Lambda q`, which is nonnegative since `psi2 >= 0`.
    pub fn lambda_q_pairing(&self, dt: f64, cell: f64) -> f64 {
        let w = trapezoid_weights(self.q.len() - 1, dt);
        self.q
            .iter()
            .zip(&self.lambda_mult)
            .zip(&w)
            .map(|((q, l), wm)| wm * cell * dot(q, l))
            .sum()
    }

    /// Long-format dump: one row per time node and grid point.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,i,q,p,lambda")?;
        for (m, t) in self.times.iter().enumerate() {
            for i in 0..self.q[m].len() {
                writeln!(
                    out,
                    "{t:.17e},{i},{:.17e},{:.17e},{:.17e}",
                    self.q[m][i], self.p[m][i], self.lambda_mult[m][i]
                )?;
            }
        }
        Ok(())
    }
}

/// Backward implicit Euler for the reduced adjoint equation in `q`:
/// `-d_t((A_0^{-2r} + tau) q) + B^{2 sigma} q + (psi1 + psi2) q = g2`,
/// `q(T) = (A_0^{-2r} + tau)^{-1} (g1 - mean(g1))`, then `p` from `q`.
pub fn solve_adjoint(data: &AdjointData, solver: &StateSolver) -> Result<AdjointState> {
    let cfg = solver.config();
    let op = solver.operator();
    if !(cfg.tau > 0.0) {
        return Err(Error::Config("the adjoint solver requires tau > 0".into()));
    }
    let steps = cfg.steps();
    if data.g2.len() != steps + 1 || data.g1.len() != op.len() {
        return Err(Error::GridMismatch("adjoint data does not match the model grid".into()));
    }
    let dt = cfg.dt;
    let two_r = 2.0 * cfg.r;
    let tau = cfg.tau;

    let mut q = vec![Vec::new(); steps + 1];
    q[steps] = cfg.basis_a.multiply_grid(&data.g1, |_, l| {
        if l > 0.0 {
            (l.powf(-two_r) + tau).recip()
        } else {
            0.0
        }
    });
    for m in (0..steps).rev() {
        let kq = op.apply_k(&q[m + 1]);
        let rhs: Vec<f64> = kq.iter().zip(&data.g2[m]).map(|(k, g)| k / dt + g).collect();
        let diag: Vec<f64> = data.psi1[m].iter().zip(&data.psi2[m]).map(|(a, b)| a + b).collect();
        q[m] = op.solve_shifted(dt, &diag, &rhs).map_err(|e| Error::at_step(m, e))?;
    }

    let mut mean_p = vec![0.0; steps + 1];
    if op.projects() {
        let source: Vec<f64> = (0..=steps)
            .map(|m| {
                let bq = op.apply_b(&q[m]);
                mean(
                    &(0..q[m].len())
                        .map(|i| data.g2[m][i] - (data.psi1[m][i] + data.psi2[m][i]) * q[m][i] - bq[i])
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        mean_p[steps] = mean(&data.g1);
        for m in (0..steps).rev() {
            mean_p[m] = mean_p[m + 1] + 0.5 * dt * (source[m] + source[m + 1]);
        }
    }
    let p: Vec<Vec<f64>> = q
        .iter()
        .zip(&mean_p)
        .map(|(qm, c)| op.apply_a_inv(qm).into_iter().map(|v| v + c).collect())
        .collect();
    let lambda_mult = q
        .iter()
        .zip(&data.psi2)
        .map(|(qm, s)| qm.iter().zip(s).map(|(a, b)| a * b).collect())
        .collect();
    let terminal: Vec<f64> = (0..op.len())
        .map(|i| p[steps][i] + tau * q[steps][i] - data.g1[i])
        .collect();
    Ok(AdjointState {
        times: cfg.times(),
        q,
        p,
        lambda_mult,
        mean_p,
        terminal_residual: max_abs(&terminal),
    })
}

/// Adds `beta3 u` and, for the adapted cost, `u - u_ref`.
fn add_control_terms(g: &mut ControlTrajectory, u: &ControlTrajectory, cost: &CostConfig, u_ref: Option<&ControlTrajectory>) {
    for (m, gm) in g.values_mut().iter_mut().enumerate() {
        for (i, gi) in gm.iter_mut().enumerate() {
            *gi += cost.beta3 * u.at(m)[i];
            if let Some(r) = u_ref {
                *gi += u.at(m)[i] - r.at(m)[i];
            }
        }
    }
}

/// Multipliers `l_m`, `m = 1..=M` (index 0 unused), of the exact discrete
/// adjoint. `l_m` is the derivative of the reduced cost with respect to the
/// control entering step `m`, minus the explicit control term.
pub fn discrete_multipliers(solver: &StateSolver, state: &StateTrajectory, cost: &CostConfig) -> Result<Vec<Vec<f64>>> {
    let cfg = solver.config();
    let op = solver.operator();
    cost.check_state(state)?;
    let steps = state.steps();
    if steps != cfg.steps() {
        return Err(Error::GridMismatch("trajectory and model have different time grids".into()));
    }
    let dt = cfg.dt;
    let cell = cfg.domain().cell_volume();
    let w = trapezoid_weights(steps, dt);
    let track = |m: usize| -> Vec<f64> {
        let mut r: Vec<f64> = state.y[m]
            .iter()
            .zip(&cost.y_q[m])
            .map(|(y, t)| cell * cost.beta2 * w[m] * (y - t))
            .collect();
        if m == steps {
            r.iter_mut()
                .zip(state.y[m].iter().zip(&cost.y_omega))
                .for_each(|(ri, (y, t))| *ri += cell * cost.beta1 * (y - t));
        }
        r
    };

    let mut ell = vec![vec![0.0; op.len()]; steps + 1];
    let mut rhs = track(steps);
    for m in (1..=steps).rev() {
        let (_, slope, _) = solver.monotone_part(&state.y[m]);
        let l = op.solve_shifted(dt, &slope, &rhs).map_err(|e| Error::at_step(m, e))?;
        let kappa = if op.projects() {
            let jl = op.apply_shifted(dt, &slope, &l);
            mean(&rhs.iter().zip(&jl).map(|(a, b)| a - b).collect::<Vec<_>>())
        } else {
            0.0
        };
        if m > 1 {
            let kl = op.apply_k(&l);
            let prev = &state.y[m - 1];
            rhs = track(m - 1);
            for i in 0..rhs.len() {
                rhs[i] += kl[i] / dt - cfg.smooth.second(prev[i]) * l[i] + kappa;
            }
        }
        ell[m] = l;
    }
    Ok(ell)
}

/// Exact `L2(Q)` gradient of the discrete reduced (adapted) cost.
pub fn discrete_gradient(
    solver: &StateSolver,
    state: &StateTrajectory,
    u: &ControlTrajectory,
    cost: &CostConfig,
    u_ref: Option<&ControlTrajectory>,
) -> Result<ControlTrajectory> {
    u.check_model(solver.config())?;
    let ell = discrete_multipliers(solver, state, cost)?;
    let w = u.weights();
    let cell = u.cell();
    let values = ell
        .iter()
        .zip(&w)
        .map(|(l, wm)| l.iter().map(|v| v / (wm * cell)).collect())
        .collect();
    let mut g = ControlTrajectory::new(u.dt(), cell, values)?;
    add_control_terms(&mut g, u, cost, u_ref);
    Ok(g)
}

/// Gradient from the continuous adjoint: `q(t_m)` as the sensitivity to the
/// control entering step `m`, rescaled from the step length to the trapezoid
/// weight, plus the control terms. `u(t_0)` does not reach the state.
pub fn continuous_gradient(
    adjoint: &AdjointState,
    u: &ControlTrajectory,
    cost: &CostConfig,
    u_ref: Option<&ControlTrajectory>,
) -> Result<ControlTrajectory> {
    if adjoint.q.len() != u.values().len() {
        return Err(Error::GridMismatch("adjoint and control time grids differ".into()));
    }
    let w = u.weights();
    let dt = u.dt();
    let values = adjoint
        .q
        .iter()
        .enumerate()
        .map(|(m, q)| {
            if m == 0 {
                vec![0.0; q.len()]
            } else {
                q.iter().map(|v| v * dt / w[m]).collect()
            }
        })
        .collect();
    let mut g = ControlTrajectory::new(dt, u.cell(), values)?;
    add_control_terms(&mut g, u, cost, u_ref);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialState, NewtonOptions};
    use crate::potentials::{PhiKind, SmoothPart};
    use crate::spectral::{BasisKind, Domain, EigenBasis};
    use std::f64::consts::PI;

    fn solver(kind_a: BasisKind) -> StateSolver {
        let d = Domain::interval(1.0, 16).unwrap();
        StateSolver::new(ModelConfig {
            basis_a: EigenBasis::shared(d.clone(), kind_a).unwrap(),
            basis_b: EigenBasis::shared(d, BasisKind::LaplacianNeumann).unwrap(),
            r: 0.5,
            sigma: 0.5,
            tau: 0.1,
            dt: 1e-2,
            t_final: 0.1,
            smooth: SmoothPart::default(),
            nonlinearity: Nonlinearity::Quench { alpha: 0.1, phi: PhiKind::Linear },
            newton: NewtonOptions::default(),
        })
        .unwrap()
    }

    fn run(s: &StateSolver) -> (StateTrajectory, ControlTrajectory) {
        let cfg = s.config();
        let init = InitialState::from_fn(cfg.domain(), |x| 0.3 * (PI * x[0]).cos() + 0.05).unwrap();
        let u = ControlTrajectory::from_fn(cfg, |t, x| (t * 10.0).sin() * x[0]);
        (s.solve(&init, &u).unwrap().0, u)
    }

    #[test]
    fn zero_data_gives_zero_adjoint() {
        let s = solver(BasisKind::LaplacianNeumann);
        let (traj, u) = run(&s);
        let cost = CostConfig::constant_targets(s.config(), [0.0, 0.0, 1.0], 0.0, 0.0).unwrap();
        let data = assemble_adjoint_data(&traj, &cost, s.config()).unwrap();
        assert!(data.g1.iter().all(|v| *v == 0.0));
        assert!(data.psi1.iter().flatten().all(|v| *v == -2.0));
        let adj = solve_adjoint(&data, &s).unwrap();
        assert!(adj.q.iter().flatten().all(|v| *v == 0.0));
        let g = discrete_gradient(&s, &traj, &u, &cost, None).unwrap();
        let expected = u.clone();
        assert!(g.axpy(-1.0, &expected).max_abs() < 1e-15);
    }

    #[test]
    fn adjoint_structure_in_both_cases() {
        for kind in [BasisKind::LaplacianNeumann, BasisKind::LaplacianDirichlet] {
            let s = solver(kind);
            let (traj, _) = run(&s);
            let cost = CostConfig::constant_targets(s.config(), [1.0, 1.0, 0.01], 0.1, 0.0).unwrap();
            let data = assemble_adjoint_data(&traj, &cost, s.config()).unwrap();
            assert!(data.psi2.iter().flatten().all(|v| *v >= 0.0));
            let adj = solve_adjoint(&data, &s).unwrap();
            assert!(adj.terminal_residual < 1e-10, "{kind}: {}", adj.terminal_residual);
            assert!(adj.lambda_q_pairing(0.01, 1.0 / 16.0) >= 0.0);
            if kind.is_neumann() {
                assert!(adj.max_abs_mean_q() < 1e-12);
            } else {
                assert!(adj.mean_p.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn adapted_gradient_at_reference_is_plain() {
        let s = solver(BasisKind::LaplacianNeumann);
        let (traj, u) = run(&s);
        let cost = CostConfig::constant_targets(s.config(), [1.0, 1.0, 0.01], 0.1, 0.0).unwrap();
        let plain = discrete_gradient(&s, &traj, &u, &cost, None).unwrap();
        let adapted = discrete_gradient(&s, &traj, &u, &cost, Some(&u)).unwrap();
        assert_eq!(plain, adapted);
    }

    #[test]
    fn obstacle_mode_is_rejected() {
        let s = solver(BasisKind::LaplacianNeumann);
        let (traj, _) = run(&s);
        let cost = CostConfig::constant_targets(s.config(), [1.0, 1.0, 0.01], 0.1, 0.0).unwrap();
        assert!(assemble_adjoint_data(&traj, &cost, &s.config().obstacle(1e-6)).is_err());
    }
}
