//! The linear operators of the implicit step in grid space and the solver for
//! the shifted systems `(K/dt + B^{2 sigma} + D) x = b`, where
//! `K = A^{-2r} + tau I` (with `A_0^{-2r}` on the zero-mean subspace when
//! `lambda_1(A) = 0`) and `D` is diagonal.
//!
//! When mass is conserved the system is posed on the zero-mean subspace. It is
//! solved through the symmetric matrix `P M P + gamma 11^T / n`, which agrees
//! with `M` there and acts as `gamma` on constants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::spectral::{power, EigenBasis};

#[derive(Debug, Clone)]
struct DenseOps {
    a_inv: DMatrix<f64>,
    b: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SchemeOperator {
    basis_a: Arc<EigenBasis>,
    basis_b: Arc<EigenBasis>,
    a_inv_mult: Vec<f64>,
    b_mult: Vec<f64>,
    tau: f64,
    project: bool,
    dense: Option<DenseOps>,
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn remove_mean(v: &mut [f64]) {
    let m = mean(v);
    v.iter_mut().for_each(|x| *x -= m);
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| a * b).sum()
}

impl SchemeOperator {
    pub fn new(cfg: &ModelConfig) -> Self {
        let two_r = 2.0 * cfg.r;
        let a_inv_mult: Vec<f64> = cfg
            .basis_a
            .eigenvalues()
            .iter()
            .map(|&l| if l > 0.0 { l.powf(-two_r) } else { 0.0 })
            .collect();
        let b_mult: Vec<f64> = cfg
            .basis_b
            .eigenvalues()
            .iter()
            .map(|&l| power(l, 2.0 * cfg.sigma))
            .collect();
        let n = cfg.domain().len();
        let dense = (n <= cfg.newton.dense_limit).then(|| {
            let a_inv = cfg.basis_a.multiplier_matrix(|j, _| a_inv_mult[j]);
            let b = cfg.basis_b.multiplier_matrix(|j, _| b_mult[j]);
            DenseOps {
                a_inv: DMatrix::from_row_slice(n, n, &a_inv),
                b: DMatrix::from_row_slice(n, n, &b),
            }
        });
        Self {
            basis_a: cfg.basis_a.clone(),
            basis_b: cfg.basis_b.clone(),
            a_inv_mult,
            b_mult,
            tau: cfg.tau,
            project: cfg.conserves_mass(),
            dense,
        }
    }

    pub fn len(&self) -> usize {
        self.a_inv_mult.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_inv_mult.is_empty()
    }

    pub fn projects(&self) -> bool {
        self.project
    }

    /// `A^{-2r} v`; the constant mode is annihilated when `lambda_1 = 0`.
    pub fn apply_a_inv(&self, v: &[f64]) -> Vec<f64> {
        match &self.dense {
            Some(d) => (&d.a_inv * DVector::from_column_slice(v)).as_slice().to_vec(),
            None => self.basis_a.multiply_grid(v, |j, _| self.a_inv_mult[j]),
        }
    }

    /// `B^{2 sigma} v`.
    pub fn apply_b(&self, v: &[f64]) -> Vec<f64> {
        match &self.dense {
            Some(d) => (&d.b * DVector::from_column_slice(v)).as_slice().to_vec(),
            None => self.basis_b.multiply_grid(v, |j, _| self.b_mult[j]),
        }
    }

    /// `K v = A^{-2r} v + tau v`.
    pub fn apply_k(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.apply_a_inv(v);
        out.iter_mut().zip(v).for_each(|(o, x)| *o += self.tau * x);
        out
    }

    /// `(K/dt + B + diag(d)) v`.
    pub fn apply_shifted(&self, dt: f64, diag: &[f64], v: &[f64]) -> Vec<f64> {
        let k = self.apply_k(v);
        let b = self.apply_b(v);
        k.iter()
            .zip(&b)
            .zip(diag.iter().zip(v))
            .map(|((k, b), (d, x))| k / dt + b + d * x)
            .collect()
    }

    /// Solves `(K/dt + B + diag(d)) x = rhs`, on the zero-mean subspace (with
    /// `rhs` projected and `x` mean-free) when mass is conserved.
    pub fn solve_shifted(&self, dt: f64, diag: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let mut b = rhs.to_vec();
        if self.project {
            remove_mean(&mut b);
        }
        let mut x = match &self.dense {
            Some(d) => self.solve_dense(d, dt, diag, &b)?,
            None => self.solve_pcg(dt, diag, &b)?,
        };
        if self.project {
            remove_mean(&mut x);
        }
        Ok(x)
    }

    fn solve_dense(&self, d: &DenseOps, dt: f64, diag: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let mut m = &d.a_inv / dt + &d.b;
        for i in 0..n {
            m[(i, i)] += self.tau / dt + diag[i];
        }
        if self.project {
            let nf = n as f64;
            let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() / nf).collect();
            let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() / nf).collect();
            let total = row_means.iter().sum::<f64>() / nf;
            let gamma = m.trace() / nf;
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += -row_means[i] - col_means[j] + total + gamma / nf;
                }
            }
        }
        let rhs = DVector::from_column_slice(b);
        if let Some(chol) = m.clone().cholesky() {
            return Ok(chol.solve(&rhs).as_slice().to_vec());
        }
        m.lu()
            .solve(&rhs)
            .map(|x| x.as_slice().to_vec())
            .ok_or_else(|| Error::Singular("shifted step matrix".into()))
    }

    fn solve_pcg(&self, dt: f64, diag: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let dbar = mean(diag);
        let precond: Vec<f64> = (0..n)
            .map(|j| {
                if self.project && j == 0 {
                    0.0
                } else {
                    let bj = self.b_mult.get(j).copied().unwrap_or(0.0);
                    ((self.a_inv_mult[j] + self.tau) / dt + bj + dbar).recip()
                }
            })
            .collect();
        let apply = |v: &[f64]| {
            let mut out = self.apply_shifted(dt, diag, v);
            if self.project {
                remove_mean(&mut out);
            }
            out
        };
        let prec = |v: &[f64]| self.basis_a.multiply_grid(v, |j, _| precond[j]);

        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z = prec(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..(10 * n).max(100) {
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::Singular("shifted step matrix is not positive definite".into()));
            }
            let a = rz / pap;
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += a * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= a * api);
            if dot(&r, &r).sqrt() <= 1e-14 * bnorm {
                return Ok(x);
            }
            z = prec(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        if dot(&r, &r).sqrt() <= 1e-10 * bnorm {
            Ok(x)
        } else {
            Err(Error::Singular("conjugate gradients did not converge".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NewtonOptions, Nonlinearity};
    use crate::potentials::{PhiKind, SmoothPart};
    use crate::spectral::{BasisKind, Domain};

    fn cfg(kind_a: BasisKind, dense_limit: usize) -> ModelConfig {
        let d = Domain::rectangle(1.0, 2.0, 6, 5).unwrap();
        ModelConfig {
            basis_a: EigenBasis::shared(d.clone(), kind_a).unwrap(),
            basis_b: EigenBasis::shared(d, BasisKind::LaplacianNeumann).unwrap(),
            r: 0.5,
            sigma: 0.5,
            tau: 0.1,
            dt: 1e-2,
            t_final: 1.0,
            smooth: SmoothPart::default(),
            nonlinearity: Nonlinearity::Quench { alpha: 0.1, phi: PhiKind::Linear },
            newton: NewtonOptions { dense_limit, ..NewtonOptions::default() },
        }
    }

    fn check_solve(kind: BasisKind, dense_limit: usize) {
        let c = cfg(kind, dense_limit);
        let op = SchemeOperator::new(&c);
        let n = op.len();
        let diag: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let x = op.solve_shifted(c.dt, &diag, &rhs).unwrap();
        let mut ax = op.apply_shifted(c.dt, &diag, &x);
        let mut b = rhs.clone();
        if op.projects() {
            assert!(mean(&x).abs() < 1e-14);
            remove_mean(&mut ax);
            remove_mean(&mut b);
        }
        let err = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{kind} dense_limit={dense_limit}: {err}");
    }

    #[test]
    fn dense_and_pcg_solve_the_projected_system() {
        for kind in [BasisKind::LaplacianNeumann, BasisKind::LaplacianDirichlet] {
            check_solve(kind, 1024);
            check_solve(kind, 0);
        }
    }

    #[test]
    fn k_annihilates_nothing_but_shifts_constants() {
        let c = cfg(BasisKind::LaplacianNeumann, 1024);
        let op = SchemeOperator::new(&c);
        let ones = vec![1.0; op.len()];
        let k1 = op.apply_k(&ones);
        assert!(k1.iter().all(|v| (v - 0.1).abs() < 1e-12));
    }
}
