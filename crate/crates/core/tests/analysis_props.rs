use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fqch_core::analysis::{
    alpha_rate_study, compare_two_runs, compare_with_brute_force, dt_self_convergence, fd_gradient_oracle, NormKind,
    NormSuite, RunSpec,
};
use fqch_core::model::{ControlTrajectory, ModelConfig};
use fqch_core::optimizer::{
    deep_quench_continuation, project_admissible, ContinuationOptions, ControlConstraints, CostConfig,
};
use fqch_core::scenario::ScenarioConfig;
use fqch_core::state::StateSolver;

fn short(preset: &str) -> ScenarioConfig {
    let mut s = ScenarioConfig::preset(preset).unwrap();
    s.t_final = 0.05;
    s
}

fn random_trajectory(cfg: &ModelConfig, seed: u64, zero_start: bool) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.domain().len();
    (0..=cfg.steps())
        .map(|m| {
            if zero_start && m == 0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
        })
        .collect()
}

fn lin(a: f64, x: &[Vec<f64>], b: f64, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| a * u + b * v).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn norms_are_seminorms(s1 in 0u64..10_000, s2 in 0u64..10_000, c in -5.0..5.0f64) {
        for preset in ["a9-1d", "dirichlet-1d"] {
            let cfg = short(preset).model().unwrap();
            let suite = NormSuite::new(&cfg).unwrap();
            let x = random_trajectory(&cfg, s1, true);
            let y = random_trajectory(&cfg, s2, true);
            for kind in [NormKind::C0L2, NormKind::L2H1, NormKind::LinfVB, NormKind::H1VAminus, NormKind::Z] {
                let nx = suite.norm(kind, &x).unwrap();
                let ny = suite.norm(kind, &y).unwrap();
                let sum = suite.norm(kind, &lin(1.0, &x, 1.0, &y)).unwrap();
                let scaled = suite.norm(kind, &lin(c, &x, 0.0, &y)).unwrap();
                prop_assert!(nx > 0.0);
                prop_assert!(sum <= (nx + ny) * (1.0 + 1e-12));
                prop_assert!((scaled - c.abs() * nx).abs() <= 1e-10 * (1.0 + nx));
                let zero = lin(0.0, &x, 0.0, &y);
                prop_assert_eq!(suite.norm(kind, &zero).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_feasible(seed in 0u64..10_000, amp in 0.0..10.0f64, rho2 in 0.05..5.0f64) {
        let cfg = short("a9-1d").model().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = ControlTrajectory::zeros(&cfg).map(|_| amp * rng.gen_range(-1.0..1.0));
        let c = ControlConstraints::new(2.0, rho2).unwrap();
        let p = project_admissible(&u, &c).control;
        prop_assert!(c.is_feasible(&p));
        let q = project_admissible(&p, &c).control;
        prop_assert!(q.axpy(-1.0, &p).norm() <= 1e-12 * (1.0 + p.norm()));
    }
}

#[test]
fn two_run_comparison_is_symmetric() {
    let s = short("a9-1d");
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let init = s.initial_state().unwrap();
    let a = RunSpec { alpha: 0.1, control: ControlTrajectory::from_fn(&cfg, |t, x| (3.0 * t).sin() * x[0]) };
    let b = RunSpec { alpha: 0.03, control: ControlTrajectory::zeros(&cfg) };
    let ab = compare_two_runs(&solver, &init, &a, &b).unwrap();
    let ba = compare_two_runs(&solver, &init, &b, &a).unwrap();
    assert!((ab.lhs - ba.lhs).abs() <= 1e-14 * ab.lhs);
    assert_eq!(ab.rhs, ba.rhs);
}

#[test]
fn pure_alpha_perturbation_is_bounded_by_the_oracle_errors() {
    let s = short("a9-1d");
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let init = s.initial_state().unwrap();
    let u = ControlTrajectory::from_fn(&cfg, |_, x| (std::f64::consts::PI * x[0]).cos());
    let alphas = [0.2, 0.05];
    let study = alpha_rate_study(&solver, &init, &u, &[0.2, 0.1, 0.05, 0.025], s.yosida_lambda).unwrap();
    let err = |a: f64| study.rows.iter().find(|r| r.alpha == a).map(|r| r.c0_l2 + r.l2_h1).unwrap();
    let row = compare_two_runs(
        &solver,
        &init,
        &RunSpec { alpha: alphas[0], control: u.clone() },
        &RunSpec { alpha: alphas[1], control: u.clone() },
    )
    .unwrap();
    assert_eq!(row.control_gap, 0.0);
    let state = row.state_c0_l2 + row.state_l2_h1;
    assert!(state <= (err(alphas[0]) + err(alphas[1])) * (1.0 + 1e-9), "{state} vs oracle errors");
}

#[test]
fn rate_study_is_bit_reproducible() {
    let s = short("a9-1d");
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let init = s.initial_state().unwrap();
    let u = ControlTrajectory::zeros(&cfg);
    let run = || serde_json::to_string(&alpha_rate_study(&solver, &init, &u, &s.sweep.alphas, 1e-6).unwrap()).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn zero_direction_has_zero_derivative() {
    let s = short("a9-1d");
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let cost = s.cost_config(&cfg).unwrap();
    let u = ControlTrajectory::from_fn(&cfg, |t, _| t);
    let report =
        fd_gradient_oracle(&solver, &s.initial_state().unwrap(), &cost, &u, &[ControlTrajectory::zeros(&cfg)], 1e-5, 1e-13)
            .unwrap();
    let r = &report.rows[0];
    assert_eq!((r.finite_difference, r.discrete, r.continuous), (0.0, 0.0, 0.0));
}

#[test]
fn oracle_without_tracking_selects_zero_control() {
    let mut s = ScenarioConfig::preset("dirichlet-1d").unwrap();
    s.cost.beta = [0.0, 0.0, 0.01];
    let s = s.oracle_scenario().unwrap();
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let r = compare_with_brute_force(
        &solver,
        &s.initial_state().unwrap(),
        &s.cost_config(&cfg).unwrap(),
        &s.constraints().unwrap(),
        s.oracle.pieces,
        s.oracle.grid,
        s.oracle.zoom_levels,
    )
    .unwrap();
    assert!(r.brute_theta.iter().all(|&t| t == 0.0), "{:?}", r.brute_theta);
    assert!(r.gradient_theta.iter().all(|t| t.abs() <= 1e-8), "{:?}", r.gradient_theta);
    assert_eq!(r.brute_cost, 0.0);
}

#[test]
fn oracle_never_does_worse_than_zero_control() {
    let s = ScenarioConfig::preset("dirichlet-1d").unwrap().oracle_scenario().unwrap();
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let r = compare_with_brute_force(
        &solver,
        &s.initial_state().unwrap(),
        &s.cost_config(&cfg).unwrap(),
        &s.constraints().unwrap(),
        s.oracle.pieces,
        s.oracle.grid,
        s.oracle.zoom_levels,
    )
    .unwrap();
    assert!(r.brute_cost <= r.zero_cost && r.gradient_cost <= r.zero_cost);
}

#[test]
fn continuation_requires_strictly_decreasing_alphas() {
    let s = short("a9-1d");
    let cfg = s.model().unwrap();
    let solver = StateSolver::new(cfg.clone()).unwrap();
    let cost = CostConfig::constant_targets(&cfg, [1.0, 1.0, 0.01], 0.1, 0.0).unwrap();
    let c = s.constraints().unwrap();
    let u = ControlTrajectory::zeros(&cfg);
    let init = s.initial_state().unwrap();
    for alphas in [vec![], vec![0.1, 0.1], vec![0.05, 0.1]] {
        let r = deep_quench_continuation(&solver, &init, &cost, &c, &alphas, &u, &ContinuationOptions::default());
        assert!(r.is_err(), "{alphas:?} accepted");
    }
}

#[test]
fn dt_study_rejects_non_halving_sequences() {
    let s = short("a9-1d");
    let solver = StateSolver::new(s.model().unwrap()).unwrap();
    let init = s.initial_state().unwrap();
    assert!(dt_self_convergence(&solver, &init, |_, _| 0.0, &[1e-2, 5e-3]).is_err());
    assert!(dt_self_convergence(&solver, &init, |_, _| 0.0, &[1e-2, 4e-3, 2e-3]).is_err());
}
