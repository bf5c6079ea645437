use proptest::prelude::*;

use fqch_core::potentials::{h, h_prime, h_second, quench_potential, yosida_indicator, PhiKind};

#[test]
fn h_is_convex_on_a_fine_grid() {
    let n = 10_000;
    let mut prev = f64::NEG_INFINITY;
    for i in 1..n {
        let v = -1.0 + 2.0 * i as f64 / n as f64;
        assert!(h_second(v).unwrap() > 0.0);
        let d = h_prime(v).unwrap();
        assert!(d > prev);
        prev = d;
    }
}

#[test]
fn deep_quench_bound_on_initial_data_is_monotone() {
    // ||h^alpha(y0)||_1 + ||(h^alpha)'(y0)||_2 on a sampled y0 bounded away from +-1
    let y0: Vec<f64> = (0..64).map(|i| 0.9 * ((i as f64 + 0.5) / 64.0 * 6.0).sin()).collect();
    let bound = |alpha: f64| {
        let (l1, l2) = y0.iter().fold((0.0, 0.0), |(a, b), &v| {
            let q = quench_potential(v, alpha, PhiKind::Power(2.0)).unwrap();
            (a + q.value.abs(), b + q.first * q.first)
        });
        l1 / 64.0 + (l2 / 64.0).sqrt()
    };
    let alphas = [1.0, 0.5, 0.2, 0.1, 0.01];
    for w in alphas.windows(2) {
        assert!(bound(w[1]) <= bound(w[0]));
    }
}

proptest! {
    #[test]
    fn subgradient_inequality(a in -0.9999..0.9999f64, b in -1.0..=1.0f64) {
        let lhs = h_prime(a).unwrap() * (b - a);
        prop_assert!(lhs <= h(b).unwrap() - h(a).unwrap() + 1e-12);
    }

    #[test]
    fn quench_family_is_ordered(v in -0.999..0.999f64, a1 in 0.001..1.0f64, a2 in 0.001..1.0f64) {
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        for phi in [PhiKind::Linear, PhiKind::Power(1.5)] {
            let p = quench_potential(v, lo, phi).unwrap().value;
            let q = quench_potential(v, hi, phi).unwrap().value;
            prop_assert!(0.0 <= p && p <= q);
        }
    }

    #[test]
    fn yosida_is_monotone_and_lipschitz(a in -3.0..3.0f64, b in -3.0..3.0f64, lambda in 1e-3..1.0f64) {
        let (fa, fb) = (yosida_indicator(a, lambda), yosida_indicator(b, lambda));
        prop_assert!((fa - fb) * (a - b) >= 0.0);
        prop_assert!((fa - fb).abs() <= (a - b).abs() / lambda * (1.0 + 1e-12));
    }
}
