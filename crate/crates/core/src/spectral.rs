//! Eigenbases of Laplacian-type operators on boxes and the spectral calculus
//! built on them: fractional powers, the associated Hilbert norms, zero-mean
//! restrictions, inverses and shifted resolvents.
//!
//! Every basis lives on the cell-centred grid `x_i = (i + 1/2) L / N`, on which
//! the cosine (Neumann) and sine (Dirichlet) families are exactly orthonormal
//! under the grid inner product `h^d * sum_i v_i w_i`. The Galerkin truncation
//! therefore uses as many modes as grid points and the grid/coefficient maps
//! are mutually inverse.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of the constant mode below which a field counts as zero-mean.
const ZERO_MEAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lengths: Vec<f64>,
    points: Vec<usize>,
}

impl Domain {
    pub fn new(lengths: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 2 {
            return Err(Error::Config(format!(
                "dimension must be 1 or 2, got {}",
                lengths.len()
            )));
        }
        if lengths.len() != points.len() {
            return Err(Error::Config(
                "lengths and grid_points must have the same dimension".into(),
            ));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("domain length must be positive, got {l}")));
        }
        if let Some(n) = points.iter().find(|n| **n < 4) {
            return Err(Error::Config(format!("need at least 4 grid points per axis, got {n}")));
        }
        Ok(Self { lengths, points })
    }

    pub fn interval(length: f64, points: usize) -> Result<Self> {
        Self::new(vec![length], vec![points])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(vec![lx, ly], vec![nx, ny])
    }

    pub fn dimension(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Total number of grid points (and of Galerkin modes).
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// |Omega|
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Quadrature weight of one grid cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.lengths
            .iter()
            .zip(&self.points)
            .map(|(l, n)| l / *n as f64)
            .product()
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        let n = self.points[axis];
        let h = self.lengths[axis] / n as f64;
        (0..n).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Grid coordinates in storage order (row-major, last axis fastest).
    pub fn coords(&self) -> Vec<Vec<f64>> {
        match self.dimension() {
            1 => self.axis_coords(0).into_iter().map(|x| vec![x]).collect(),
            _ => {
                let xs = self.axis_coords(0);
                let ys = self.axis_coords(1);
                xs.iter()
                    .flat_map(|x| ys.iter().map(move |y| vec![*x, *y]))
                    .collect()
            }
        }
    }

    /// Grid inner product `h^d sum v_i w_i`, the discrete L2(Omega) pairing.
    pub fn inner(&self, v: &[f64], w: &[f64]) -> f64 {
        self.cell_volume() * v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).sqrt()
    }

    pub fn mean(&self, v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn integral(&self, v: &[f64]) -> f64 {
        self.cell_volume() * v.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    LaplacianNeumann,
    LaplacianDirichlet,
    BilaplacianNeumann,
    BilaplacianDirichlet,
}

impl BasisKind {
    pub fn is_neumann(self) -> bool {
        matches!(self, BasisKind::LaplacianNeumann | BasisKind::BilaplacianNeumann)
    }

    fn is_bilaplacian(self) -> bool {
        matches!(
            self,
            BasisKind::BilaplacianNeumann | BasisKind::BilaplacianDirichlet
        )
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BasisKind::LaplacianNeumann => "laplacian_neumann",
            BasisKind::LaplacianDirichlet => "laplacian_dirichlet",
            BasisKind::BilaplacianNeumann => "bilaplacian_neumann",
            BasisKind::BilaplacianDirichlet => "bilaplacian_dirichlet",
        };
        f.write_str(s)
    }
}

/// One axis of a tensor basis: `table[i * n + k] = e_k(x_i)`.
#[derive(Debug, Clone)]
struct AxisTable {
    n: usize,
    weight: f64,
    table: Vec<f64>,
    /// Mode numbers (0-based for cosines, 1-based for sines).
    wavenumbers: Vec<usize>,
    /// Laplacian eigenvalue of each axis mode.
    lambdas: Vec<f64>,
}

impl AxisTable {
    fn new(length: f64, n: usize, neumann: bool) -> Self {
        let h = length / n as f64;
        let wavenumbers: Vec<usize> = if neumann {
            (0..n).collect()
        } else {
            (1..=n).collect()
        };
        let mut table = vec![0.0; n * n];
        for (k, &m) in wavenumbers.iter().enumerate() {
            let freq = std::f64::consts::PI * m as f64 / length;
            for i in 0..n {
                let x = (i as f64 + 0.5) * h;
                table[i * n + k] = if neumann { (freq * x).cos() } else { (freq * x).sin() };
            }
            // Normalise in the discrete inner product; this reproduces the
            // closed-form constants sqrt(1/L), sqrt(2/L) and the aliased top sine.
            let norm2: f64 = (0..n).map(|i| table[i * n + k].powi(2)).sum::<f64>() * h;
            let scale = norm2.sqrt().recip();
            for i in 0..n {
                table[i * n + k] *= scale;
            }
        }
        let lambdas = wavenumbers
            .iter()
            .map(|&m| (std::f64::consts::PI * m as f64 / length).powi(2))
            .collect();
        Self {
            n,
            weight: h,
            table,
            wavenumbers,
            lambdas,
        }
    }
}

/// Eigenpairs of a diagonalizable box operator, sorted by eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    domain: Domain,
    kind: BasisKind,
    eigenvalues: Vec<f64>,
    /// Tensor mode numbers of sorted mode `j`.
    modes: Vec<Vec<usize>>,
    /// Sorted index -> flat tensor index.
    order: Vec<usize>,
    axes: Vec<AxisTable>,
}

impl EigenBasis {
    pub fn new(domain: Domain, kind: BasisKind) -> Result<Self> {
        let neumann = kind.is_neumann();
        let axes: Vec<AxisTable> = domain
            .lengths()
            .iter()
            .zip(domain.points())
            .map(|(&l, &n)| AxisTable::new(l, n, neumann))
            .collect();

        let mut entries: Vec<(f64, Vec<usize>, usize)> = match axes.len() {
            1 => (0..axes[0].n)
                .map(|k| (axes[0].lambdas[k], vec![axes[0].wavenumbers[k]], k))
                .collect(),
            2 => {
                let (ax, ay) = (&axes[0], &axes[1]);
                let mut v = Vec::with_capacity(ax.n * ay.n);
                for k1 in 0..ax.n {
                    for k2 in 0..ay.n {
                        v.push((
                            ax.lambdas[k1] + ay.lambdas[k2],
                            vec![ax.wavenumbers[k1], ay.wavenumbers[k2]],
                            k1 * ay.n + k2,
                        ));
                    }
                }
                v
            }
            d => return Err(Error::Config(format!("unsupported dimension {d}"))),
        };
        if kind.is_bilaplacian() {
            for e in &mut entries {
                e.0 *= e.0;
            }
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

        Ok(Self {
            domain,
            kind,
            eigenvalues: entries.iter().map(|e| e.0).collect(),
            modes: entries.iter().map(|e| e.1.clone()).collect(),
            order: entries.iter().map(|e| e.2).collect(),
            axes,
        })
    }

    pub fn shared(domain: Domain, kind: BasisKind) -> Result<Arc<Self>> {
        Self::new(domain, kind).map(Arc::new)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, j: usize) -> &[usize] {
        &self.modes[j]
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// lambda_1 = 0, and e_1 is the constant `|Omega|^{-1/2}`.
    pub fn first_eigenvalue_zero(&self) -> bool {
        self.kind.is_neumann()
    }

    fn tensor_forward(&self, grid: &[f64]) -> Vec<f64> {
        match self.axes.len() {
            1 => {
                let a = &self.axes[0];
                let n = a.n;
                (0..n)
                    .map(|k| a.weight * (0..n).map(|i| a.table[i * n + k] * grid[i]).sum::<f64>())
                    .collect()
            }
            _ => {
                let (ax, ay) = (&self.axes[0], &self.axes[1]);
                let (nx, ny) = (ax.n, ay.n);
                // contract y first: tmp[i1, k2]
                let mut tmp = vec![0.0; nx * ny];
                for i1 in 0..nx {
                    let row = &grid[i1 * ny..(i1 + 1) * ny];
                    for k2 in 0..ny {
                        tmp[i1 * ny + k2] = ay.weight
                            * (0..ny).map(|i2| ay.table[i2 * ny + k2] * row[i2]).sum::<f64>();
                    }
                }
                let mut out = vec![0.0; nx * ny];
                for k1 in 0..nx {
                    for k2 in 0..ny {
                        out[k1 * ny + k2] = ax.weight
                            * (0..nx)
                                .map(|i1| ax.table[i1 * nx + k1] * tmp[i1 * ny + k2])
                                .sum::<f64>();
                    }
                }
                out
            }
        }
    }

    fn tensor_inverse(&self, tensor: &[f64]) -> Vec<f64> {
        match self.axes.len() {
            1 => {
                let a = &self.axes[0];
                let n = a.n;
                (0..n)
                    .map(|i| (0..n).map(|k| a.table[i * n + k] * tensor[k]).sum::<f64>())
                    .collect()
            }
            _ => {
                let (ax, ay) = (&self.axes[0], &self.axes[1]);
                let (nx, ny) = (ax.n, ay.n);
                let mut tmp = vec![0.0; nx * ny];
                for k1 in 0..nx {
                    for i2 in 0..ny {
                        tmp[k1 * ny + i2] = (0..ny)
                            .map(|k2| ay.table[i2 * ny + k2] * tensor[k1 * ny + k2])
                            .sum::<f64>();
                    }
                }
                let mut out = vec![0.0; nx * ny];
                for i1 in 0..nx {
                    for i2 in 0..ny {
                        out[i1 * ny + i2] = (0..nx)
                            .map(|k1| ax.table[i1 * nx + k1] * tmp[k1 * ny + i2])
                            .sum::<f64>();
                    }
                }
                out
            }
        }
    }

    /// Grid values -> coefficients `(v, e_j)` in sorted order.
    pub fn forward(&self, grid: &[f64]) -> Vec<f64> {
        assert_eq!(grid.len(), self.len(), "grid length does not match basis");
        let tensor = self.tensor_forward(grid);
        self.order.iter().map(|&t| tensor[t]).collect()
    }

    /// Coefficients in sorted order -> grid values.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len(), "coefficient length does not match basis");
        let mut tensor = vec![0.0; coeffs.len()];
        for (j, &t) in self.order.iter().enumerate() {
            tensor[t] = coeffs[j];
        }
        self.tensor_inverse(&tensor)
    }

    /// Applies the spectral multiplier `v -> sum_j m(j, lambda_j) (v, e_j) e_j` to grid values.
    pub fn multiply_grid<F>(&self, grid: &[f64], multiplier: F) -> Vec<f64>
    where
        F: Fn(usize, f64) -> f64,
    {
        let mut c = self.forward(grid);
        for (j, cj) in c.iter_mut().enumerate() {
            *cj *= multiplier(j, self.eigenvalues[j]);
        }
        self.inverse(&c)
    }

    /// Grid-space matrix (row-major, n x n) of a spectral multiplier. The matrix is
    /// symmetric because the grid weights are uniform.
    pub fn multiplier_matrix<F>(&self, multiplier: F) -> Vec<f64>
    where
        F: Fn(usize, f64) -> f64,
    {
        let n = self.len();
        let mut mat = vec![0.0; n * n];
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit[col] = 1.0;
            let image = self.multiply_grid(&unit, &multiplier);
            unit[col] = 0.0;
            for (row, v) in image.into_iter().enumerate() {
                mat[row * n + col] = v;
            }
        }
        mat
    }

    /// `A^s` on grid values, with `0^s = 0` for `s > 0`.
    pub fn power_grid(&self, grid: &[f64], exponent: f64) -> Vec<f64> {
        self.multiply_grid(grid, |_, lambda| power(lambda, exponent))
    }

    pub fn write_spectral_csv<W: Write + ?Sized>(&self, out: &mut W, coeffs: &[f64]) -> std::io::Result<()> {
        writeln!(out, "j,lambda_j,coeff")?;
        for (j, (lambda, c)) in self.eigenvalues.iter().zip(coeffs).enumerate() {
            writeln!(out, "{},{:.17e},{:.17e}", j + 1, lambda, c)?;
        }
        Ok(())
    }
}

/// `lambda^s` with `0^0 = 1` and `0^s = 0` otherwise.
pub fn power(lambda: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        1.0
    } else if lambda == 0.0 {
        0.0
    } else {
        lambda.powf(exponent)
    }
}

/// Writes grid values as `x[,y],value` rows.
pub fn write_grid_csv<W: Write + ?Sized>(out: &mut W, domain: &Domain, values: &[f64]) -> std::io::Result<()> {
    match domain.dimension() {
        1 => writeln!(out, "x,value")?,
        _ => writeln!(out, "x,y,value")?,
    }
    for (coords, v) in domain.coords().iter().zip(values) {
        for c in coords {
            write!(out, "{c:.17e},")?;
        }
        writeln!(out, "{v:.17e}")?;
    }
    Ok(())
}

/// A function represented by its coefficients in an eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralField {
    basis: Arc<EigenBasis>,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(basis: Arc<EigenBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for a basis of size {}",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<EigenBasis>) -> Self {
        let n = basis.len();
        Self {
            basis,
            coeffs: vec![0.0; n],
        }
    }

    /// The single eigenfunction `e_j` (0-based `j`).
    pub fn mode(basis: Arc<EigenBasis>, j: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[j] = 1.0;
        f
    }

    pub fn from_grid(basis: Arc<EigenBasis>, grid: &[f64]) -> Result<Self> {
        if grid.len() != basis.len() {
            return Err(Error::GridMismatch(format!(
                "{} grid values for a basis of size {}",
                grid.len(),
                basis.len()
            )));
        }
        let coeffs = basis.forward(grid);
        Ok(Self { basis, coeffs })
    }

    pub fn constant(basis: Arc<EigenBasis>, value: f64) -> Self {
        let grid = vec![value; basis.len()];
        let coeffs = basis.forward(&grid);
        Self { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn to_grid(&self) -> Vec<f64> {
        self.basis.inverse(&self.coeffs)
    }

    fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.coeffs.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    fn same_basis(&self, other: &SpectralField) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &other.basis)
            || (self.basis.kind == other.basis.kind && self.basis.domain == other.basis.domain)
        {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live in different bases".into()))
        }
    }

    fn map_coeffs<F: Fn(f64) -> f64>(&self, f: F) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&self.basis.eigenvalues)
            .map(|(c, &l)| f(l) * c)
            .collect();
        SpectralField {
            basis: Arc::clone(&self.basis),
            coeffs,
        }
    }

    /// `A^s v`.
    pub fn apply_power(&self, exponent: f64) -> Result<SpectralField> {
        self.check_finite("apply_power")?;
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(Error::Config(format!("power exponent must be >= 0, got {exponent}")));
        }
        Ok(self.map_coeffs(|l| power(l, exponent)))
    }

    /// Plain L2 inner product, computed from coefficients (Parseval).
    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.same_basis(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// The Hilbert inner product of `V^r`: `(A^r v, A^r w)`, plus `(v,e_1)(w,e_1)`
    /// when `lambda_1 = 0`.
    pub fn frac_inner(&self, other: &SpectralField, exponent: f64) -> Result<f64> {
        self.same_basis(other)?;
        let zero_first = self.basis.first_eigenvalue_zero();
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(&self.basis.eigenvalues)
            .enumerate()
            .map(|(j, ((a, b), &l))| {
                let w = if j == 0 && zero_first { 1.0 } else { power(l, exponent).powi(2) };
                w * a * b
            })
            .sum())
    }

    pub fn frac_norm(&self, exponent: f64) -> f64 {
        self.frac_inner(self, exponent)
            .expect("same basis")
            .max(0.0)
            .sqrt()
    }

    /// Graph norm `(||v||^2 + ||A^r v||^2)^{1/2}`.
    pub fn graph_norm(&self, exponent: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.basis.eigenvalues)
            .map(|(c, &l)| (1.0 + power(l, exponent).powi(2)) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Dual norm `||v||_{A,-r}` of the `V^r` norm.
    pub fn dual_norm(&self, exponent: f64) -> f64 {
        let zero_first = self.basis.first_eigenvalue_zero();
        self.coeffs
            .iter()
            .zip(&self.basis.eigenvalues)
            .enumerate()
            .map(|(j, (c, &l))| {
                if j == 0 && zero_first {
                    c * c
                } else {
                    c * c / power(l, exponent).powi(2)
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean(&self) -> f64 {
        let domain = &self.basis.domain;
        if self.basis.first_eigenvalue_zero() {
            self.coeffs[0] * domain.volume().powf(-0.5)
        } else {
            domain.mean(&self.to_grid())
        }
    }

    fn constant_mode_is_zero(&self) -> bool {
        !self.basis.first_eigenvalue_zero()
            || self.coeffs[0].abs() <= ZERO_MEAN_TOL * (1.0 + self.l2_norm())
    }

    /// `A^{-s} v` on the modes with positive eigenvalue. When `lambda_1 = 0` the
    /// input must have zero mean.
    pub fn inverse_power(&self, exponent: f64) -> Result<SpectralField> {
        self.check_finite("inverse_power")?;
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::Config(format!("inverse exponent must be > 0, got {exponent}")));
        }
        if !self.constant_mode_is_zero() {
            return Err(Error::Domain {
                what: "inverse power outside the zero-mean subspace",
                value: self.mean(),
            });
        }
        Ok(self.map_coeffs(|l| if l > 0.0 { l.powf(-exponent) } else { 0.0 }))
    }

    /// `(A^{-2r} + tau I)^{-1} v` (on the zero-mean subspace when `lambda_1 = 0`).
    pub fn shifted_resolvent(&self, r: f64, tau: f64) -> Result<SpectralField> {
        self.check_finite("shifted_resolvent")?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Config(format!("resolvent shift tau must be > 0, got {tau}")));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Config(format!("resolvent exponent must be > 0, got {r}")));
        }
        if !self.constant_mode_is_zero() {
            return Err(Error::Domain {
                what: "shifted resolvent outside the zero-mean subspace",
                value: self.mean(),
            });
        }
        Ok(self.map_coeffs(|l| if l > 0.0 { (l.powf(-2.0 * r) + tau).recip() } else { 0.0 }))
    }

    pub fn scaled(&self, factor: f64) -> SpectralField {
        self.map_coeffs(|_| factor)
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.same_basis(other)?;
        Ok(SpectralField {
            basis: Arc::clone(&self.basis),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }
}

/// A field with vanishing constant-mode coefficient (the subspace `V_0`).
#[derive(Debug, Clone)]
pub struct ZeroMeanField {
    inner: SpectralField,
}

impl ZeroMeanField {
    /// Accepts a field whose constant-mode coefficient is zero (to round-off);
    /// the coefficient is then set to exactly zero.
    pub fn new(field: SpectralField) -> Result<Self> {
        if !field.constant_mode_is_zero() {
            return Err(Error::Domain {
                what: "field is not mean-free",
                value: field.mean(),
            });
        }
        Ok(Self::project(field))
    }

    /// Orthogonal projection onto the zero-mean subspace.
    pub fn project(mut field: SpectralField) -> Self {
        if field.basis.first_eigenvalue_zero() {
            field.coeffs[0] = 0.0;
        }
        Self { inner: field }
    }

    pub fn field(&self) -> &SpectralField {
        &self.inner
    }

    pub fn into_field(self) -> SpectralField {
        self.inner
    }

    pub fn apply_power(&self, exponent: f64) -> Result<ZeroMeanField> {
        Ok(Self::project(self.inner.apply_power(exponent)?))
    }

    /// `A_0^{-s}`, the inverse of `A_0^{s}` on the zero-mean subspace.
    pub fn inverse_power(&self, exponent: f64) -> Result<ZeroMeanField> {
        Ok(Self::project(self.inner.inverse_power(exponent)?))
    }

    pub fn shifted_resolvent(&self, r: f64, tau: f64) -> Result<ZeroMeanField> {
        Ok(Self::project(self.inner.shifted_resolvent(r, tau)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn basis(kind: BasisKind, n: usize) -> Arc<EigenBasis> {
        EigenBasis::shared(Domain::interval(1.0, n).unwrap(), kind).unwrap()
    }

    #[test]
    fn closed_form_eigenvalues() {
        let neu = basis(BasisKind::LaplacianNeumann, 16);
        assert_eq!(neu.eigenvalues()[0], 0.0);
        assert_relative_eq!(neu.eigenvalues()[1], PI * PI, max_relative = 1e-15);
        let dir = basis(BasisKind::LaplacianDirichlet, 16);
        assert_relative_eq!(dir.eigenvalues()[0], PI * PI, max_relative = 1e-15);
        let bi = basis(BasisKind::BilaplacianNeumann, 16);
        for (a, b) in bi.eigenvalues().iter().zip(neu.eigenvalues()) {
            assert_relative_eq!(*a, b * b, max_relative = 1e-15);
        }
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::interval(0.0, 8).is_err());
        assert!(Domain::interval(1.0, 3).is_err());
        assert!(Domain::new(vec![1.0; 3], vec![8; 3]).is_err());
        assert!(Domain::new(vec![1.0], vec![8, 8]).is_err());
    }

    #[test]
    fn neumann_first_mode_is_constant() {
        let b = basis(BasisKind::LaplacianNeumann, 12);
        let e1 = SpectralField::mode(Arc::clone(&b), 0).to_grid();
        for v in e1 {
            assert_relative_eq!(v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn two_d_sorting_is_stable_on_ties() {
        let d = Domain::rectangle(1.0, 1.0, 6, 6).unwrap();
        let b = EigenBasis::new(d, BasisKind::LaplacianNeumann).unwrap();
        assert!(b.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        // (0,1) and (1,0) share pi^2; lexicographic order puts (0,1) first
        assert_eq!(b.mode(1), &[0, 1]);
        assert_eq!(b.mode(2), &[1, 0]);
        assert_eq!(b.eigenvalues()[1], b.eigenvalues()[2]);
    }

    #[test]
    fn apply_power_examples() {
        let b = basis(BasisKind::LaplacianNeumann, 16);
        let e2 = SpectralField::mode(Arc::clone(&b), 1);
        let out = e2.apply_power(0.5).unwrap();
        assert_relative_eq!(out.coeffs()[1], PI, max_relative = 1e-15);
        let c = SpectralField::constant(Arc::clone(&b), 3.0);
        assert!(c.apply_power(0.3).unwrap().l2_norm() < 1e-12);
        assert_eq!(c.apply_power(0.0).unwrap().coeffs(), c.coeffs());
        let bad = SpectralField::new(Arc::clone(&b), vec![f64::NAN; 16]).unwrap();
        assert!(matches!(bad.apply_power(1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn frac_norm_examples() {
        let b = basis(BasisKind::LaplacianNeumann, 16);
        for r in [0.0, 0.25, 1.0, 3.0] {
            assert_relative_eq!(SpectralField::mode(Arc::clone(&b), 0).frac_norm(r), 1.0);
        }
        assert_relative_eq!(
            SpectralField::mode(Arc::clone(&b), 1).frac_norm(1.0),
            PI * PI,
            max_relative = 1e-14
        );
        assert_eq!(SpectralField::zeros(b).frac_norm(0.7), 0.0);
    }

    #[test]
    fn mean_examples() {
        let b = basis(BasisKind::LaplacianNeumann, 16);
        assert_relative_eq!(SpectralField::constant(Arc::clone(&b), 2.0).mean(), 2.0, max_relative = 1e-14);
        assert!(SpectralField::mode(Arc::clone(&b), 1).mean().abs() < 1e-15);
        let mut c = vec![0.0; 16];
        c[0] = 1.0;
        c[1] = 1.0;
        let f = SpectralField::new(Arc::clone(&b), c).unwrap();
        assert_relative_eq!(f.mean(), 1.0, max_relative = 1e-14);
        let dir = basis(BasisKind::LaplacianDirichlet, 16);
        assert_relative_eq!(SpectralField::constant(dir, 2.0).mean(), 2.0, max_relative = 1e-13);
    }

    #[test]
    fn inverse_power_examples() {
        let b = basis(BasisKind::LaplacianNeumann, 16);
        let e2 = ZeroMeanField::new(SpectralField::mode(Arc::clone(&b), 1)).unwrap();
        let inv = e2.inverse_power(1.0).unwrap();
        assert_relative_eq!(inv.field().coeffs()[1], PI.powi(-2), max_relative = 1e-14);
        let e1 = SpectralField::mode(Arc::clone(&b), 0);
        assert!(matches!(e1.inverse_power(1.0), Err(Error::Domain { .. })));
        assert!(ZeroMeanField::new(e1).is_err());
    }

    #[test]
    fn shifted_resolvent_examples() {
        let b = basis(BasisKind::LaplacianNeumann, 16);
        let e2 = SpectralField::mode(Arc::clone(&b), 1);
        let out = e2.shifted_resolvent(0.5, 1.0).unwrap();
        // (pi^-2 + 1)^-1
        assert_relative_eq!(out.coeffs()[1], 0.908_000_331_649_624_8, max_relative = 1e-12);
        let big = e2.shifted_resolvent(0.5, 1e8).unwrap();
        assert_relative_eq!(big.coeffs()[1], 1e-8, max_relative = 1e-8);
        assert!(matches!(e2.shifted_resolvent(0.5, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_writers() {
        let b = basis(BasisKind::LaplacianDirichlet, 4);
        let mut out = Vec::new();
        write_grid_csv(&mut out, b.domain(), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("x,value\n"));
        assert_eq!(text.lines().count(), 5);
        let mut out = Vec::new();
        b.write_spectral_csv(&mut out, &[0.0; 4]).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("j,lambda_j,coeff\n1,"));
    }
}
