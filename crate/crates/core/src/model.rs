//! Model parameters, initial data, control trajectories and the time grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{PhiKind, SmoothPart};
use crate::spectral::{Domain, EigenBasis, SpectralField};

/// The monotone part of the potential used by the implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Nonlinearity {
    /// `phi(alpha) h'` with the logarithmic `h`.
    Quench { alpha: f64, phi: PhiKind },
    /// Yosida ramp of the subdifferential of the indicator of `[-1, 1]`.
    Obstacle { lambda: f64 },
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Nonlinearity::Quench { alpha, phi } => {
                phi.validate()?;
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
                }
                Ok(())
            }
            Nonlinearity::Obstacle { lambda } => {
                if !(lambda.is_finite() && lambda > 0.0) {
                    return Err(Error::Config(format!("yosida lambda must be positive, got {lambda}")));
                }
                Ok(())
            }
        }
    }

    pub fn is_quench(&self) -> bool {
        matches!(self, Nonlinearity::Quench { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    /// Max-norm tolerance on the (projected) residual.
    pub tol: f64,
    pub max_iter: usize,
    /// A Newton step below this max-norm counts as converged (round-off floor).
    pub stagnation: f64,
    /// Quench iterates are kept inside `|y| <= 1 - barrier_margin`.
    pub barrier_margin: f64,
    /// Largest system solved by dense factorization; larger ones use PCG.
    pub dense_limit: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            stagnation: 1e-14,
            barrier_margin: 1e-10,
            dense_limit: 1024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub basis_a: Arc<EigenBasis>,
    pub basis_b: Arc<EigenBasis>,
    pub r: f64,
    pub sigma: f64,
    pub tau: f64,
    pub dt: f64,
    pub t_final: f64,
    pub smooth: SmoothPart,
    pub nonlinearity: Nonlinearity,
    pub newton: NewtonOptions,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.basis_a.domain() != self.basis_b.domain() {
            return Err(Error::Config("A and B must live on the same domain".into()));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::Config(format!("r must be positive, got {}", self.r)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be nonnegative, got {}", self.tau)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::Config("dt and T must be positive".into()));
        }
        time_steps(self.dt, self.t_final)?;
        SmoothPart::new(self.smooth.c1)?;
        self.nonlinearity.validate()
    }

    pub fn domain(&self) -> &Domain {
        self.basis_a.domain()
    }

    pub fn steps(&self) -> usize {
        time_steps(self.dt, self.t_final).expect("validated time grid")
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|m| m as f64 * self.dt).collect()
    }

    /// `lambda_1(A) = 0`: mass is conserved and mu has a free mean.
    pub fn conserves_mass(&self) -> bool {
        self.basis_a.first_eigenvalue_zero()
    }

    pub fn with_alpha(&self, alpha: f64) -> ModelConfig {
        let phi = match self.nonlinearity {
            Nonlinearity::Quench { phi, .. } => phi,
            Nonlinearity::Obstacle { .. } => PhiKind::Linear,
        };
        let mut cfg = self.clone();
        cfg.nonlinearity = Nonlinearity::Quench { alpha, phi };
        cfg
    }

    pub fn obstacle(&self, lambda: f64) -> ModelConfig {
        let mut cfg = self.clone();
        cfg.nonlinearity = Nonlinearity::Obstacle { lambda };
        cfg
    }

    pub fn with_dt(&self, dt: f64) -> ModelConfig {
        let mut cfg = self.clone();
        cfg.dt = dt;
        cfg
    }

    /// `phi(alpha)` in quench mode, `None` in obstacle mode.
    pub fn phi_alpha(&self) -> Option<f64> {
        match self.nonlinearity {
            Nonlinearity::Quench { alpha, phi } => Some(phi.eval(alpha)),
            Nonlinearity::Obstacle { .. } => None,
        }
    }
}

/// Number of steps `M = T / dt`, requiring `dt` to divide `T` to 1e-12.
pub fn time_steps(dt: f64, t_final: f64) -> Result<usize> {
    let ratio = t_final / dt;
    let m = ratio.round();
    if m < 1.0 || ((m * dt - t_final).abs() > 1e-12 * t_final.max(1.0)) {
        return Err(Error::Config(format!("dt = {dt} does not divide T = {t_final}")));
    }
    Ok(m as usize)
}

/// Trapezoid weights on `M + 1` equispaced nodes.
pub fn trapezoid_weights(steps: usize, dt: f64) -> Vec<f64> {
    (0..=steps)
        .map(|m| if m == 0 || m == steps { 0.5 * dt } else { dt })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InitialState {
    y0: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl InitialState {
    /// Grid values of `y0`; they must lie strictly inside `(-1, 1)`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        let lower = values.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lower <= -1.0 {
            return Err(Error::Domain { what: "initial state lower bound", value: lower });
        }
        if upper >= 1.0 {
            return Err(Error::Domain { what: "initial state upper bound", value: upper });
        }
        Ok(Self { y0: values, lower, upper })
    }

    pub fn from_field(field: &SpectralField) -> Result<Self> {
        Self::new(field.to_grid())
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(domain: &Domain, f: F) -> Result<Self> {
        Self::new(domain.coords().iter().map(|x| f(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.y0
    }

    /// Essential bounds `(m_-, m_+)`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn field(&self, basis: Arc<EigenBasis>) -> Result<SpectralField> {
        SpectralField::from_grid(basis, &self.y0)
    }
}

/// Grid fields `u(t_m)`, `m = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    dt: f64,
    cell: f64,
    values: Vec<Vec<f64>>,
}

impl ControlTrajectory {
    pub fn new(dt: f64, cell: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::GridMismatch("a control needs at least two time nodes".into()));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::GridMismatch("ragged control trajectory".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        Ok(Self { dt, cell, values })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::constant(cfg, 0.0)
    }

    pub fn constant(cfg: &ModelConfig, value: f64) -> Self {
        let n = cfg.domain().len();
        Self {
            dt: cfg.dt,
            cell: cfg.domain().cell_volume(),
            values: vec![vec![value; n]; cfg.steps() + 1],
        }
    }

    /// `u(t, x) = f(t, x)` sampled on the space-time grid.
    pub fn from_fn<F: Fn(f64, &[f64]) -> f64>(cfg: &ModelConfig, f: F) -> Self {
        let coords = cfg.domain().coords();
        let values = cfg
            .times()
            .into_iter()
            .map(|t| coords.iter().map(|x| f(t, x)).collect())
            .collect();
        Self {
            dt: cfg.dt,
            cell: cfg.domain().cell_volume(),
            values,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn points(&self) -> usize {
        self.values[0].len()
    }

    pub fn at(&self, m: usize) -> &[f64] {
        &self.values[m]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.values
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(self.steps(), self.dt)
    }

    pub fn check_compatible(&self, other: &ControlTrajectory) -> Result<()> {
        if self.values.len() != other.values.len() || self.points() != other.points() {
            return Err(Error::GridMismatch("controls on different space-time grids".into()));
        }
        Ok(())
    }

    pub fn check_model(&self, cfg: &ModelConfig) -> Result<()> {
        if self.steps() != cfg.steps() || self.points() != cfg.domain().len() {
            return Err(Error::GridMismatch(format!(
                "control has {} steps x {} points, model expects {} x {}",
                self.steps(),
                self.points(),
                cfg.steps(),
                cfg.domain().len()
            )));
        }
        Ok(())
    }

    /// Discrete `L2(Q)` inner product (trapezoid in time, cell rule in space).
    pub fn inner(&self, other: &ControlTrajectory) -> f64 {
        let w = self.weights();
        self.values
            .iter()
            .zip(&other.values)
            .zip(&w)
            .map(|((a, b), wm)| wm * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            * self.cell
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Discrete `H1(0,T;L2)` norm: `L2(Q)` part plus forward differences in time.
    pub fn h1_norm(&self) -> f64 {
        let diff: f64 = self
            .values
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            * self.cell
            / self.dt;
        (self.inner(self) + diff).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &ControlTrajectory) -> ControlTrajectory {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect())
            .collect();
        ControlTrajectory {
            dt: self.dt,
            cell: self.cell,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> ControlTrajectory {
        self.map(|v| s * v)
    }

    pub fn map<F: FnMut(f64) -> f64>(&self, mut f: F) -> ControlTrajectory {
        ControlTrajectory {
            dt: self.dt,
            cell: self.cell,
            values: self.values.iter().map(|v| v.iter().map(|x| f(*x)).collect()).collect(),
        }
    }

    pub fn zeros_like(&self) -> ControlTrajectory {
        self.map(|_| 0.0)
    }
}
