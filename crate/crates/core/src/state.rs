//! Implicit Euler / spectral Galerkin solver for the state system.
//!
//! One step solves, for `z = y(t_{m+1})`,
//!
//! ```text
//! (z - y)/dt + A^{2r} mu = 0
//! tau (z - y)/dt + B^{2 sigma} z + N(z) + f2'(y) = mu + u(t_{m+1})
//! ```
//!
//! with `N` the quench derivative `phi(alpha) h'` or the Yosida ramp. The first
//! equation is used to eliminate `mu`. When `lambda_1(A) = 0` this leaves the
//! mean of `mu` as a scalar unknown and the constraint `mean(z) = mean(y)`.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, mean, remove_mean, SchemeOperator};
use crate::model::{ControlTrajectory, InitialState, ModelConfig, Nonlinearity};
use crate::potentials::{self, h_prime_clamped, h_second_clamped};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
    pub halvings: usize,
    /// Evaluations of `h'`/`h''` that hit the argument clamp.
    pub clamp_incidents: usize,
    /// Converged because the Newton correction reached round-off level.
    pub stagnated: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub stats: NewtonStats,
}

#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    /// `y(t_m)`, `m = 0..=M`, grid values.
    pub y: Vec<Vec<f64>>,
    /// `mu(t_m)`, `m = 1..=M`, stored at index `m - 1`.
    pub mu: Vec<Vec<f64>>,
    pub newton: Vec<NewtonStats>,
    /// Running minimum and maximum of the grid values of `y`.
    pub separation: (f64, f64),
    /// The mean of `mu` is not determined by the obstacle problem when
    /// `lambda_1(A) = 0`.
    pub mu_mean_non_unique: bool,
}

impl StateTrajectory {
    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn final_state(&self) -> &[f64] {
        self.y.last().expect("nonempty trajectory")
    }

    pub fn y_field(&self, m: usize, basis: Arc<crate::spectral::EigenBasis>) -> Result<SpectralField> {
        SpectralField::from_grid(basis, &self.y[m])
    }

    pub fn mu_field(&self, m: usize, basis: Arc<crate::spectral::EigenBasis>) -> Result<SpectralField> {
        if m == 0 {
            return Err(Error::GridMismatch("mu is defined from the first step on".into()));
        }
        SpectralField::from_grid(basis, &self.mu[m - 1])
    }

    pub fn max_abs(&self) -> f64 {
        self.y.iter().map(|v| max_abs(v)).fold(0.0, f64::max)
    }

    /// `max_m |mean(y(t_m)) - mean(y0)|`.
    pub fn mass_drift(&self) -> f64 {
        let m0 = mean(&self.y[0]);
        self.y.iter().map(|v| (mean(v) - m0).abs()).fold(0.0, f64::max)
    }

    pub fn total_newton_iterations(&self) -> usize {
        self.newton.iter().map(|s| s.iterations).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// Cumulative `int ||A^r mu||^2`.
    pub diss_a: Vec<f64>,
    /// Cumulative `tau int ||d_t y||^2`.
    pub diss_tau: Vec<f64>,
    /// Cumulative `int (u, d_t y)`.
    pub work: Vec<f64>,
}

impl EnergyReport {
    /// `E(T) - E(0) + int ||A^r mu||^2 + tau int ||d_t y||^2 - int (u, d_t y)`.
    pub fn identity_residual(&self) -> f64 {
        let last = self.energy.len() - 1;
        self.energy[last] - self.energy[0] + self.diss_a[last] + self.diss_tau[last] - self.work[last]
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.energy.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn max_increase(&self) -> f64 {
        self.energy.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,E,dissA,dissTau")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[i], self.energy[i], self.diss_a[i], self.diss_tau[i]
            )?;
        }
        Ok(())
    }
}

/// Precomputed operators for one model configuration.
#[derive(Debug, Clone)]
pub struct StateSolver {
    cfg: ModelConfig,
    op: SchemeOperator,
}

impl StateSolver {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let op = SchemeOperator::new(&cfg);
        Ok(Self { cfg, op })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &SchemeOperator {
        &self.op
    }

    /// A solver for the same operators with another nonlinearity.
    pub fn with_nonlinearity(&self, nonlinearity: Nonlinearity) -> Result<Self> {
        nonlinearity.validate()?;
        let mut out = self.clone();
        out.cfg.nonlinearity = nonlinearity;
        Ok(out)
    }

    pub fn with_newton_tol(&self, tol: f64) -> Self {
        let mut out = self.clone();
        out.cfg.newton.tol = tol;
        out
    }

    /// `N(v)` and `N'(v)` pointwise, plus the number of clamp incidents.
    pub fn monotone_part(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
        let mut hits = 0;
        let (value, slope) = match self.cfg.nonlinearity {
            Nonlinearity::Quench { alpha, phi } => {
                let s = phi.eval(alpha);
                z.iter()
                    .map(|&v| {
                        let (d1, h1) = h_prime_clamped(v);
                        let (d2, h2) = h_second_clamped(v);
                        hits += usize::from(h1 || h2);
                        (s * d1, s * d2)
                    })
                    .unzip()
            }
            Nonlinearity::Obstacle { lambda } => z
                .iter()
                .map(|&v| (potentials::yosida_indicator(v, lambda), potentials::yosida_slope(v, lambda)))
                .unzip(),
        };
        (value, slope, hits)
    }

    fn residual(&self, y: &[f64], f2p: &[f64], u: &[f64], z: &[f64], hits: &mut usize) -> Vec<f64> {
        let dt = self.cfg.dt;
        let diff: Vec<f64> = z.iter().zip(y).map(|(a, b)| a - b).collect();
        let k = self.op.apply_k(&diff);
        let b = self.op.apply_b(z);
        let (n, _, h) = self.monotone_part(z);
        *hits += h;
        (0..z.len()).map(|i| k[i] / dt + b[i] + n[i] + f2p[i] - u[i]).collect()
    }

    fn project(&self, mut g: Vec<f64>) -> (Vec<f64>, f64) {
        if self.op.projects() {
            let m = mean(&g);
            g.iter_mut().for_each(|x| *x -= m);
            (g, m)
        } else {
            (g, 0.0)
        }
    }

    /// Clamps to `[-bound, bound]`; when mass is conserved, the removed mass is
    /// spread over the unclamped entries and the clamp repeated.
    fn clamp_to_barrier(&self, v: &mut [f64], bound: f64, target_mean: f64) {
        for _ in 0..4 {
            v.iter_mut().for_each(|x| *x = x.clamp(-bound, bound));
            if !self.op.projects() {
                return;
            }
            let drift = target_mean - mean(v);
            let free = v.iter().filter(|x| x.abs() < bound).count();
            if drift == 0.0 || free == 0 {
                return;
            }
            let share = drift * v.len() as f64 / free as f64;
            v.iter_mut().filter(|x| x.abs() < bound).for_each(|x| *x += share);
            if max_abs(v) <= bound {
                return;
            }
        }
    }

    /// One implicit step from grid values `y` with the control `u(t_{m+1})`.
    pub fn step_grid(&self, y: &[f64], u: &[f64]) -> Result<StepOutcome> {
        let n = self.op.len();
        if y.len() != n || u.len() != n {
            return Err(Error::GridMismatch(format!(
                "step expects {n} grid values, got y: {}, u: {}",
                y.len(),
                u.len()
            )));
        }
        if y.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state step input"));
        }
        let opts = self.cfg.newton;
        let quench = self.cfg.nonlinearity.is_quench();
        let bound = 1.0 - opts.barrier_margin;
        if quench {
            if let Some(v) = y.iter().find(|v| v.abs() >= 1.0) {
                return Err(Error::Domain { what: "state outside (-1, 1) in quench mode", value: *v });
            }
        }
        let f2p: Vec<f64> = y.iter().map(|&v| self.cfg.smooth.first(v)).collect();
        let target_mean = mean(y);
        let mut stats = NewtonStats::default();
        let mut z: Vec<f64> = if quench {
            y.iter().map(|v| v.clamp(-bound, bound)).collect()
        } else {
            y.to_vec()
        };

        let (mut f, mut shift) = self.project(self.residual(y, &f2p, u, &z, &mut stats.clamp_incidents));
        loop {
            let res = max_abs(&f);
            stats.residual = res;
            if res <= opts.tol {
                break;
            }
            if stats.iterations >= opts.max_iter {
                return Err(Error::NewtonFailure { iterations: stats.iterations, residual: res });
            }
            stats.iterations += 1;
            let (_, slope, hits) = self.monotone_part(&z);
            stats.clamp_incidents += hits;
            let delta: Vec<f64> = self
                .op
                .solve_shifted(self.cfg.dt, &slope, &f)?
                .into_iter()
                .map(|v| -v)
                .collect();
            if max_abs(&delta) <= opts.stagnation * (1.0 + max_abs(&z)) {
                stats.stagnated = true;
                break;
            }
            let norm0 = dot(&f, &f).sqrt();
            let mut s = 1.0;
            loop {
                if s < 1e-12 {
                    return Err(Error::LineSearch(format!(
                        "Newton step rejected down to s = {s:e} (residual {res:e})"
                    )));
                }
                let mut trial: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
                if self.op.projects() {
                    let drift = target_mean - mean(&trial);
                    trial.iter_mut().for_each(|v| *v += drift);
                }
                if quench && max_abs(&trial) > bound {
                    self.clamp_to_barrier(&mut trial, bound, target_mean);
                    if max_abs(&trial) > bound {
                        s *= 0.5;
                        stats.halvings += 1;
                        continue;
                    }
                }
                let mut hits = 0;
                let (ft, st) = self.project(self.residual(y, &f2p, u, &trial, &mut hits));
                if dot(&ft, &ft).sqrt() <= (1.0 - 1e-4 * s) * norm0 {
                    stats.clamp_incidents += hits;
                    z = trial;
                    f = ft;
                    shift = st;
                    break;
                }
                s *= 0.5;
                stats.halvings += 1;
            }
        }

        let diff: Vec<f64> = z.iter().zip(y).map(|(a, b)| (a - b) / self.cfg.dt).collect();
        let a_inv = self.op.apply_a_inv(&diff);
        let mu = a_inv.iter().map(|v| shift - v).collect();
        Ok(StepOutcome { y: z, mu, stats })
    }

    /// `E(y) = 1/2 ||B^sigma y||^2 + int (G(y) + f2(y))` with `G = phi(alpha) h`
    /// or the Moreau envelope of the indicator.
    pub fn energy(&self, y: &[f64]) -> Result<f64> {
        let cell = self.cfg.domain().cell_volume();
        let quad = 0.5 * cell * dot(y, &self.op.apply_b(y));
        let mut pot = 0.0;
        for &v in y {
            pot += self.cfg.smooth.value(v);
            pot += match self.cfg.nonlinearity {
                Nonlinearity::Quench { alpha, phi } => phi.eval(alpha) * potentials::h(v)?,
                Nonlinearity::Obstacle { lambda } => potentials::yosida_envelope(v, lambda),
            };
        }
        Ok(quad + cell * pot)
    }

    /// Marches the scheme over the time grid.
    pub fn solve(&self, init: &InitialState, u: &ControlTrajectory) -> Result<(StateTrajectory, EnergyReport)> {
        let cfg = &self.cfg;
        u.check_model(cfg)?;
        let n = cfg.domain().len();
        if init.values().len() != n {
            return Err(Error::GridMismatch(format!(
                "initial state has {} values, grid has {n}",
                init.values().len()
            )));
        }
        let steps = cfg.steps();
        let dt = cfg.dt;
        let cell = cfg.domain().cell_volume();
        let times = cfg.times();

        let y0 = init.values().to_vec();
        let mut lo = y0.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = y0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut energy = vec![self.energy(&y0)?];
        let mut diss_a = vec![0.0];
        let mut diss_tau = vec![0.0];
        let mut work = vec![0.0];
        let mut ys = Vec::with_capacity(steps + 1);
        let mut mus = Vec::with_capacity(steps);
        let mut newton = Vec::with_capacity(steps);
        ys.push(y0);

        for m in 0..steps {
            let prev = &ys[m];
            let out = self
                .step_grid(prev, u.at(m + 1))
                .map_err(|e| Error::at_step(m + 1, e))?;
            let rate: Vec<f64> = out.y.iter().zip(prev).map(|(a, b)| (a - b) / dt).collect();
            let mut rate0 = rate.clone();
            if self.op.projects() {
                remove_mean(&mut rate0);
            }
            let da = dt * cell * dot(&rate0, &self.op.apply_a_inv(&rate0));
            let dtau = cfg.tau * dt * cell * dot(&rate, &rate);
            let dw = dt * cell * dot(u.at(m + 1), &rate);
            diss_a.push(diss_a[m] + da);
            diss_tau.push(diss_tau[m] + dtau);
            work.push(work[m] + dw);
            energy.push(self.energy(&out.y).map_err(|e| Error::at_step(m + 1, e))?);
            for &v in &out.y {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            ys.push(out.y);
            mus.push(out.mu);
            newton.push(out.stats);
        }

        let traj = StateTrajectory {
            times: times.clone(),
            y: ys,
            mu: mus,
            newton,
            separation: (lo, hi),
            mu_mean_non_unique: !cfg.nonlinearity.is_quench() && cfg.conserves_mass(),
        };
        let report = EnergyReport {
            times,
            energy,
            diss_a,
            diss_tau,
            work,
        };
        Ok((traj, report))
    }
}

/// One implicit step on spectral fields; both fields are returned in the basis of `y_prev`.
pub fn step(y_prev: &SpectralField, u_now: &SpectralField, cfg: &ModelConfig) -> Result<(SpectralField, SpectralField)> {
    let solver = StateSolver::new(cfg.clone())?;
    let out = solver.step_grid(&y_prev.to_grid(), &u_now.to_grid())?;
    let basis = y_prev.basis().clone();
    Ok((
        SpectralField::from_grid(basis.clone(), &out.y)?,
        SpectralField::from_grid(basis, &out.mu)?,
    ))
}

pub fn solve(cfg: &ModelConfig, init: &InitialState, u: &ControlTrajectory) -> Result<(StateTrajectory, EnergyReport)> {
    StateSolver::new(cfg.clone())?.solve(init, u)
}
