//! Discrete norms of the time-dependent function spaces, evaluated on grid
//! trajectories `y[m]` at the times `t_m = m dt`.
//!
//! Time integrals use the trapezoid weights of the control grid, so the
//! norms are consistent with the `L2(Q)` inner product of controls.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{trapezoid_weights, ModelConfig};
use crate::spectral::{power, BasisKind, EigenBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `max_t ||v(t)||`
    C0L2,
    /// `(int_0^T ||v||_{H^1}^2)^{1/2}`
    L2H1,
    /// `max_t ||v(t)||_{V_B^sigma}`
    LinfVB,
    /// `(int_0^T ||v||_{A,-r}^2 + ||dv/dt||_{A,-r}^2)^{1/2}`
    H1VAminus,
    /// Norm of the test space with `v(0) = 0` used for the adjoint time derivative.
    Z,
}

/// Norm evaluator bound to a model's bases, exponents and time grid.
#[derive(Debug, Clone)]
pub struct NormSuite {
    basis_a: Arc<EigenBasis>,
    basis_b: Arc<EigenBasis>,
    /// Neumann cosine basis, used for `H^1`.
    cosine: Arc<EigenBasis>,
    r: f64,
    sigma: f64,
    dt: f64,
    weights: Vec<f64>,
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl NormSuite {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let cosine = if cfg.basis_b.kind() == BasisKind::LaplacianNeumann {
            cfg.basis_b.clone()
        } else {
            EigenBasis::shared(cfg.domain().clone(), BasisKind::LaplacianNeumann)?
        };
        Ok(Self {
            basis_a: cfg.basis_a.clone(),
            basis_b: cfg.basis_b.clone(),
            cosine,
            r: cfg.r,
            sigma: cfg.sigma,
            dt: cfg.dt,
            weights: trapezoid_weights(cfg.steps(), cfg.dt),
        })
    }

    fn check(&self, v: &[Vec<f64>]) -> Result<()> {
        if v.len() != self.weights.len() {
            return Err(Error::GridMismatch(format!(
                "trajectory has {} time levels, expected {}",
                v.len(),
                self.weights.len()
            )));
        }
        let n = self.cosine.len();
        if v.iter().any(|s| s.len() != n) {
            return Err(Error::GridMismatch(format!("slab length differs from {n}")));
        }
        Ok(())
    }

    fn l2_sq(&self, v: &[f64]) -> f64 {
        sq(&self.cosine.forward(v))
    }

    /// `||v||^2 + ||grad v||^2`.
    fn h1_sq(&self, v: &[f64]) -> f64 {
        self.cosine
            .forward(v)
            .iter()
            .zip(self.cosine.eigenvalues())
            .map(|(c, l)| (1.0 + l) * c * c)
            .sum()
    }

    /// Squared `V_A^{-r}` norm; the constant mode enters with weight one when `lambda_1 = 0`.
    fn a_dual_sq(&self, v: &[f64]) -> f64 {
        let zero_first = self.basis_a.first_eigenvalue_zero();
        self.basis_a
            .forward(v)
            .iter()
            .zip(self.basis_a.eigenvalues())
            .enumerate()
            .map(|(j, (c, &l))| if j == 0 && zero_first { c * c } else { c * c / power(l, self.r).powi(2) })
            .sum()
    }

    fn b_frac_sq(&self, v: &[f64]) -> f64 {
        let zero_first = self.basis_b.first_eigenvalue_zero();
        self.basis_b
            .forward(v)
            .iter()
            .zip(self.basis_b.eigenvalues())
            .enumerate()
            .map(|(j, (c, &l))| if j == 0 && zero_first { c * c } else { power(l, self.sigma).powi(2) * c * c })
            .sum()
    }

    fn diffs(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        v.windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) / self.dt).collect())
            .collect()
    }

    pub fn norm(&self, kind: NormKind, v: &[Vec<f64>]) -> Result<f64> {
        self.check(v)?;
        Ok(match kind {
            NormKind::C0L2 => v.iter().map(|s| self.l2_sq(s)).fold(0.0, f64::max).sqrt(),
            NormKind::L2H1 => v.iter().zip(&self.weights).map(|(s, w)| w * self.h1_sq(s)).sum::<f64>().sqrt(),
            NormKind::LinfVB => v.iter().map(|s| self.b_frac_sq(s)).fold(0.0, f64::max).sqrt(),
            NormKind::H1VAminus => {
                let vals: f64 = v.iter().zip(&self.weights).map(|(s, w)| w * self.a_dual_sq(s)).sum();
                let rates: f64 = self.diffs(v).iter().map(|d| self.dt * self.a_dual_sq(d)).sum();
                (vals + rates).sqrt()
            }
            NormKind::Z => self.z_norm(v)?,
        })
    }

    /// `C0L2 + L2H1`, the error measure of the deep-quench estimates.
    pub fn state_error(&self, v: &[Vec<f64>]) -> Result<f64> {
        Ok(self.norm(NormKind::C0L2, v)? + self.norm(NormKind::L2H1, v)?)
    }

    fn z_modes(&self) -> std::ops::Range<usize> {
        let skip = usize::from(self.basis_a.first_eigenvalue_zero());
        skip..self.cosine.len()
    }

    /// Coefficient sequences `c[j][m]` of the Neumann cosine expansion for `m >= 1`.
    fn mode_series(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let coeffs: Vec<Vec<f64>> = v[1..].iter().map(|s| self.cosine.forward(s)).collect();
        (0..self.cosine.len())
            .map(|j| coeffs.iter().map(|c| c[j]).collect())
            .collect()
    }

    /// Tridiagonal Gram matrix of the `Z` inner product for one spatial mode,
    /// with unknowns `z_1..z_M` and `z_0 = 0`: returns (sub/super, diagonal).
    fn z_gram(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.weights.len() - 1;
        let diag: Vec<f64> = (1..=m)
            .map(|k| {
                let jumps = if k < m { 2.0 } else { 1.0 };
                jumps / self.dt + self.weights[k] * (1.0 + lambda)
            })
            .collect();
        (vec![-1.0 / self.dt; m.saturating_sub(1)], diag)
    }

    /// `||v||_Z` for `v` with `v(0) = 0`; the mean is discarded when `lambda_1(A) = 0`.
    pub fn z_norm(&self, v: &[Vec<f64>]) -> Result<f64> {
        self.check(v)?;
        if self.l2_sq(&v[0]) > 0.0 {
            return Err(Error::Domain { what: "Z-norm initial value", value: self.l2_sq(&v[0]).sqrt() });
        }
        let series = self.mode_series(v);
        let lambdas = self.cosine.eigenvalues();
        let mut total = 0.0;
        for j in self.z_modes() {
            let (off, diag) = self.z_gram(lambdas[j]);
            let z = &series[j];
            let gz = tridiag_apply(&off, &diag, z);
            total += z.iter().zip(&gz).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(total.max(0.0).sqrt())
    }

    /// Dual norm of `f` under the pairing `int_0^T (f, z) dt` with `Z`.
    pub fn z_dual_norm(&self, f: &[Vec<f64>]) -> Result<f64> {
        self.check(f)?;
        let series = self.mode_series(f);
        let lambdas = self.cosine.eigenvalues();
        let mut total = 0.0;
        for j in self.z_modes() {
            let (off, diag) = self.z_gram(lambdas[j]);
            let b: Vec<f64> = series[j].iter().zip(&self.weights[1..]).map(|(c, w)| w * c).collect();
            let x = tridiag_solve(&off, &diag, &b);
            total += b.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(total.max(0.0).sqrt())
    }

    /// `int_0^T (f, z) dt` with trapezoid weights.
    pub fn pairing(&self, f: &[Vec<f64>], z: &[Vec<f64>]) -> Result<f64> {
        self.check(f)?;
        self.check(z)?;
        let cell = self.cosine.domain().cell_volume();
        Ok(f.iter()
            .zip(z)
            .zip(&self.weights)
            .map(|((a, b), w)| w * cell * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }
}

fn tridiag_apply(off: &[f64], diag: &[f64], x: &[f64]) -> Vec<f64> {
    (0..diag.len())
        .map(|i| {
            let mut s = diag[i] * x[i];
            if i > 0 {
                s += off[i - 1] * x[i - 1];
            }
            if i + 1 < diag.len() {
                s += off[i] * x[i + 1];
            }
            s
        })
        .collect()
}

/// Thomas algorithm for a symmetric tridiagonal system.
fn tridiag_solve(off: &[f64], diag: &[f64], b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let lower = if i > 0 { off[i - 1] } else { 0.0 };
        let denom = diag[i] - if i > 0 { lower * c[i - 1] } else { 0.0 };
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (b[i] - if i > 0 { lower * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = d[i] - if i + 1 < n { c[i] * x[i + 1] } else { 0.0 };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    #[test]
    fn tridiagonal_solve_inverts_apply() {
        let off = vec![-1.0, -2.0, -0.5];
        let diag = vec![4.0, 5.0, 6.0, 3.0];
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = tridiag_apply(&off, &diag, &x);
        let y = tridiag_solve(&off, &diag, &b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_trajectory_norms() {
        let mut s = ScenarioConfig::preset("a9-1d").unwrap();
        s.t_final = 0.01;
        let cfg = s.model().unwrap();
        let suite = NormSuite::new(&cfg).unwrap();
        let v = vec![vec![0.5; 32]; cfg.steps() + 1];
        assert!((suite.norm(NormKind::C0L2, &v).unwrap() - 0.5).abs() < 1e-14);
        let l2h1 = suite.norm(NormKind::L2H1, &v).unwrap();
        assert!((l2h1 - 0.5 * 0.01_f64.sqrt()).abs() < 1e-14);
        // constants have no time derivative, and V_A^{-r} sees them with unit weight
        let h1 = suite.norm(NormKind::H1VAminus, &v).unwrap();
        assert!((h1 - l2h1).abs() < 1e-14);
    }
}
