//! Nonlinearities of the state system: the logarithmic function `h`, the
//! deep-quench family `phi(alpha) h`, the Yosida approximation of the
//! subdifferential of the indicator of `[-1, 1]`, the smooth concave part `f2`
//! and the classical potentials assembled from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arguments of `h'` and `h''` are clamped to `|v| <= 1 - CLAMP_MARGIN`.
pub const CLAMP_MARGIN: f64 = 1e-12;

/// `x ln x` with `0 ln 0 = 0`.
fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `h(v) = (1+v) ln(1+v) + (1-v) ln(1-v)` on `[-1, 1]`.
pub fn h(v: f64) -> Result<f64> {
    if !(v.abs() <= 1.0) {
        return Err(Error::Domain { what: "h", value: v });
    }
    Ok(xlnx(1.0 + v) + xlnx(1.0 - v))
}

pub fn h_prime(v: f64) -> Result<f64> {
    if !(v.abs() < 1.0) {
        return Err(Error::Domain { what: "h'", value: v });
    }
    Ok(((1.0 + v) / (1.0 - v)).ln())
}

pub fn h_second(v: f64) -> Result<f64> {
    if !(v.abs() < 1.0) {
        return Err(Error::Domain { what: "h''", value: v });
    }
    Ok(2.0 / (1.0 - v * v))
}

fn clamp_interior(v: f64) -> (f64, bool) {
    let bound = 1.0 - CLAMP_MARGIN;
    if v.abs() > bound {
        (v.signum() * bound, true)
    } else {
        (v, false)
    }
}

/// `h'` with the argument clamped into the interior. The flag reports whether
/// the clamp was active.
pub fn h_prime_clamped(v: f64) -> (f64, bool) {
    let (w, hit) = clamp_interior(v);
    (((1.0 + w) / (1.0 - w)).ln(), hit)
}

pub fn h_second_clamped(v: f64) -> (f64, bool) {
    let (w, hit) = clamp_interior(v);
    (2.0 / (1.0 - w * w), hit)
}

/// Closed forms of the increasing function `phi` in `h^alpha = phi(alpha) h`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `phi(alpha) = alpha`
    #[default]
    Linear,
    /// `phi(alpha) = alpha^p`, `p >= 1`
    Power(f64),
}


impl PhiKind {
    pub fn validate(self) -> Result<()> {
        match self {
            PhiKind::Linear => Ok(()),
            PhiKind::Power(p) if p.is_finite() && p >= 1.0 => Ok(()),
            PhiKind::Power(p) => Err(Error::Config(format!("phi exponent must be >= 1, got {p}"))),
        }
    }

    pub fn eval(self, alpha: f64) -> f64 {
        match self {
            PhiKind::Linear => alpha,
            PhiKind::Power(p) => alpha.powf(p),
        }
    }

    pub fn derivative(self, alpha: f64) -> f64 {
        match self {
            PhiKind::Linear => 1.0,
            PhiKind::Power(p) => p * alpha.powf(p - 1.0),
        }
    }
}

/// The deep-quench continuation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchSchedule {
    pub phi: PhiKind,
    pub alphas: Vec<f64>,
}

impl QuenchSchedule {
    pub fn new(phi: PhiKind, alphas: Vec<f64>) -> Result<Self> {
        let s = Self { phi, alphas };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.phi.validate()?;
        if self.alphas.is_empty() {
            return Err(Error::Config("alpha sequence is empty".into()));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Config("alpha values must be positive".into()));
        }
        if self.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("alpha sequence must be strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn phi_values(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| self.phi.eval(*a)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchValue {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// `h^alpha = phi(alpha) h` together with its first two derivatives.
pub fn quench_potential(v: f64, alpha: f64, phi: PhiKind) -> Result<QuenchValue> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let scale = phi.eval(alpha);
    Ok(QuenchValue {
        value: scale * h(v)?,
        first: scale * h_prime(v)?,
        second: scale * h_second(v)?,
    })
}

/// Yosida approximation of the subdifferential of `I_[-1,1]`:
/// `(v - clamp(v, -1, 1)) / lambda`.
pub fn yosida_indicator(v: f64, lambda: f64) -> f64 {
    (v - v.clamp(-1.0, 1.0)) / lambda
}

/// Derivative of [`yosida_indicator`] (a generalized one at `|v| = 1`).
pub fn yosida_slope(v: f64, lambda: f64) -> f64 {
    if v.abs() > 1.0 {
        lambda.recip()
    } else {
        0.0
    }
}

/// Moreau envelope of the indicator, `dist(v, [-1,1])^2 / (2 lambda)`.
pub fn yosida_envelope(v: f64, lambda: f64) -> f64 {
    let d = v - v.clamp(-1.0, 1.0);
    d * d / (2.0 * lambda)
}

/// The smooth part `f2(v) = -c1 v^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothPart {
    pub c1: f64,
}

impl Default for SmoothPart {
    fn default() -> Self {
        Self { c1: 1.0 }
    }
}

impl SmoothPart {
    pub fn new(c1: f64) -> Result<Self> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(Error::Config(format!("c1 must be positive, got {c1}")));
        }
        Ok(Self { c1 })
    }

    pub fn value(&self, v: f64) -> f64 {
        -self.c1 * v * v
    }

    pub fn first(&self, v: f64) -> f64 {
        -2.0 * self.c1 * v
    }

    pub fn second(&self, _v: f64) -> f64 {
        -2.0 * self.c1
    }

    pub fn third(&self, _v: f64) -> f64 {
        0.0
    }

    /// Lipschitz constant of `f2'`.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.c1
    }
}

/// The regular, logarithmic and double-obstacle potentials.
pub mod classic {
    use super::*;

    pub fn f_reg(v: f64) -> f64 {
        0.25 * (v * v - 1.0).powi(2)
    }

    pub fn f_reg_prime(v: f64) -> f64 {
        v * (v * v - 1.0)
    }

    pub fn f_log(v: f64, c1: f64) -> Result<f64> {
        h(v).map(|hv| hv - c1 * v * v)
            .map_err(|_| Error::Domain { what: "f_log", value: v })
    }

    pub fn f_log_prime(v: f64, c1: f64) -> Result<f64> {
        h_prime(v).map(|d| d - 2.0 * c1 * v)
            .map_err(|_| Error::Domain { what: "f_log'", value: v })
    }

    pub fn f_obs(v: f64, c1: f64) -> Result<f64> {
        if v.abs() <= 1.0 {
            Ok(-c1 * v * v)
        } else {
            Err(Error::Domain { what: "f_obs", value: v })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn h_values() {
        assert_eq!(h(0.0).unwrap(), 0.0);
        assert_relative_eq!(h(1.0).unwrap(), 2.0 * 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(h(-1.0).unwrap(), 1.386_294_361_119_890_6, max_relative = 1e-15);
        assert_relative_eq!(h(-0.5).unwrap(), 0.261_624_071_882_273_93, max_relative = 1e-14);
        match h(1.5) {
            Err(Error::Domain { value, .. }) => assert_eq!(value, 1.5),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn derivative_values() {
        assert_eq!(h_prime(0.0).unwrap(), 0.0);
        assert_eq!(h_second(0.0).unwrap(), 2.0);
        assert_relative_eq!(h_prime(0.5).unwrap(), 3f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(h_second(0.9).unwrap(), 10.526_315_789_473_685, max_relative = 1e-14);
        assert!(h_prime(1.0).is_err());
        assert!(h_second(-1.0).is_err());
    }

    #[test]
    fn clamped_derivatives_report_safeguard() {
        let (v, hit) = h_prime_clamped(1.0);
        assert!(hit && v.is_finite() && v > 0.0);
        let (_, hit) = h_prime_clamped(0.3);
        assert!(!hit);
        let (v, hit) = h_second_clamped(-1.0);
        assert!(hit && v.is_finite());
    }

    #[test]
    fn quench_family_ordering_and_limits() {
        let a = quench_potential(0.5, 0.1, PhiKind::Linear).unwrap();
        let b = quench_potential(0.5, 0.2, PhiKind::Linear).unwrap();
        assert!(0.0 <= a.value && a.value <= b.value);
        let tiny = quench_potential(0.5, 1e-12, PhiKind::Linear).unwrap();
        assert!(tiny.value < 1e-12 && tiny.first.abs() < 1e-11);
        let p = quench_potential(0.5, 0.5, PhiKind::Power(2.0)).unwrap();
        assert_relative_eq!(p.second, 0.25 * 2.0 / 0.75, max_relative = 1e-15);
        assert!(quench_potential(1.0, 0.1, PhiKind::Linear).is_err());
        assert!(quench_potential(0.0, 0.0, PhiKind::Linear).is_err());
    }

    #[test]
    fn phi_closed_forms() {
        assert!(PhiKind::Power(0.5).validate().is_err());
        for phi in [PhiKind::Linear, PhiKind::Power(1.5), PhiKind::Power(3.0)] {
            let grid: Vec<f64> = (1..200).map(|i| i as f64 * 0.01).collect();
            assert!(grid.windows(2).all(|w| phi.eval(w[0]) < phi.eval(w[1])));
            assert!(phi.eval(1e-9) < 1e-8);
            let a = 0.37;
            let fd = (phi.eval(a + 1e-6) - phi.eval(a - 1e-6)) / 2e-6;
            assert_relative_eq!(fd, phi.derivative(a), max_relative = 1e-8);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(QuenchSchedule::new(PhiKind::Linear, vec![0.2, 0.1]).is_ok());
        assert!(QuenchSchedule::new(PhiKind::Linear, vec![0.1, 0.2]).is_err());
        assert!(QuenchSchedule::new(PhiKind::Linear, vec![0.1, 0.1]).is_err());
        assert!(QuenchSchedule::new(PhiKind::Linear, vec![]).is_err());
        assert!(QuenchSchedule::new(PhiKind::Linear, vec![0.1, -0.1]).is_err());
    }

    #[test]
    fn yosida_examples() {
        assert_eq!(yosida_indicator(0.5, 0.1), 0.0);
        assert_relative_eq!(yosida_indicator(1.5, 0.1), 5.0, max_relative = 1e-14);
        assert_relative_eq!(yosida_indicator(-2.0, 0.5), -2.0, max_relative = 1e-15);
        assert_eq!(yosida_envelope(0.3, 1e-3), 0.0);
    }

    #[test]
    fn classic_potentials() {
        assert_eq!(classic::f_reg(1.0), 0.0);
        assert_eq!(classic::f_reg(-1.0), 0.0);
        assert_eq!(classic::f_reg(0.0), 0.25);
        assert_eq!(classic::f_log(0.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(classic::f_log(1.0, 1.0).unwrap(), 2.0 * 2f64.ln() - 1.0);
        assert!(classic::f_log(1.2, 1.0).is_err());
        assert_eq!(classic::f_obs(0.5, 1.0).unwrap(), -0.25);
        assert!(classic::f_obs(1.5, 1.0).is_err());
        assert_relative_eq!(classic::f_log_prime(0.5, 1.0).unwrap(), 3f64.ln() - 1.0);
        assert_eq!(classic::f_reg_prime(1.0), 0.0);
    }

    #[test]
    fn smooth_part() {
        let f = SmoothPart::new(1.0).unwrap();
        assert_eq!(f.second(0.3), -2.0);
        assert_eq!(f.lipschitz(), 2.0);
        assert!(SmoothPart::new(0.0).is_err());
    }

    #[test]
    fn convexity_on_fine_grid() {
        let n = 10_000;
        let grid: Vec<f64> = (1..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        assert!(grid.iter().all(|v| h_second(*v).unwrap() > 0.0));
        assert!(grid.windows(2).all(|w| h_prime(w[0]).unwrap() < h_prime(w[1]).unwrap()));
    }

    #[test]
    fn subgradient_inequality_on_grid() {
        let grid: Vec<f64> = (1..200).map(|i| -1.0 + i as f64 / 100.0).collect();
        for &a in &grid {
            for &b in &grid {
                let lhs = h_prime(a).unwrap() * (b - a);
                let rhs = h(b).unwrap() - h(a).unwrap();
                assert!(lhs <= rhs + 1e-14, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn finite_difference_of_h() {
        let step = 1e-5;
        for i in 0..=1980 {
            let v = -0.99 + i as f64 * 1e-3;
            let fd = (h(v + step).unwrap() - h(v - step).unwrap()) / (2.0 * step);
            assert!((fd - h_prime(v).unwrap()).abs() <= 1e-6, "v={v}");
        }
    }

    #[test]
    fn initial_datum_bound_is_monotone_in_alpha() {
        // y0 = 0.2 cos(pi x) sampled on a midpoint grid of (0,1)
        let n = 64;
        let y0: Vec<f64> = (0..n)
            .map(|i| 0.2 * (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
            .collect();
        let cell = 1.0 / n as f64;
        let bound = |alpha: f64| {
            let l1: f64 = y0.iter().map(|v| quench_potential(*v, alpha, PhiKind::Linear).unwrap().value.abs()).sum::<f64>() * cell;
            let l2: f64 = (y0.iter().map(|v| quench_potential(*v, alpha, PhiKind::Linear).unwrap().first.powi(2)).sum::<f64>() * cell).sqrt();
            l1 + l2
        };
        let alphas = [1.0, 0.5, 0.2, 0.1, 0.05, 0.01];
        assert!(alphas.windows(2).all(|w| bound(w[1]) <= bound(w[0])));
    }

    proptest! {
        #[test]
        fn yosida_is_monotone_and_lipschitz(a in -5.0f64..5.0, b in -5.0f64..5.0, lambda in 1e-3f64..1.0) {
            let (fa, fb) = (yosida_indicator(a, lambda), yosida_indicator(b, lambda));
            prop_assert!((fa - fb) * (a - b) >= 0.0);
            prop_assert!((fa - fb).abs() <= (a - b).abs() / lambda * (1.0 + 1e-12) + 1e-12);
        }
    }
}
