use approx::assert_relative_eq;
use proptest::prelude::*;

use trecourse::benchmarks::{build, ar1_trend, BenchmarkId, BenchmarkKind, TrendKind};
use trecourse::noise::NoiseSpec;
use trecourse::scm::{Expr, Intervention, Mode, Observed, Parent, ScmSpec, StructuralEquation, Variable};
use trecourse::trend::{evaluate_trend, TrendSpec};
use trecourse::Error;

/// Mean of `X^{t+tau}` given `x^{t-1}` on the one-dimensional process.
fn ar1_trend_mean(a: f64, c: f64, mu: f64, x_prev: f64, t: i64, tau: i64) -> f64 {
    let drift: f64 = (0..=tau).map(|i| a.powi((tau - i) as i32) * (-c * (t + i) as f64 + mu)).sum();
    a.powi(tau as i32 + 1) * x_prev + drift
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn ar1(noise: NoiseSpec) -> ScmSpec {
    let eq = StructuralEquation::new(0, vec![Parent::lagged(0, 1)], Expr::linear(0.0, &[0.5]), noise);
    ScmSpec::new(vec![Variable::new("X").actionable()], vec![eq], None, 1, 0).unwrap()
}

#[test]
fn trend_values() {
    assert_eq!(evaluate_trend(&TrendSpec::new(1.0, 1.0, 0.0, 1.0), 10), 0.5);
    assert_eq!(evaluate_trend(&TrendSpec::new(0.0, 1.0, 1.5, 1.0), 37), 0.0);
    assert_eq!(evaluate_trend(&TrendSpec::new(1.0, 1.0, 0.0, 1.0), 500), 10.0);
    let step = TrendSpec::step(4, -2.0);
    assert_eq!(step.evaluate(3), 0.0);
    assert_eq!(step.evaluate(4), -2.0);
}

proptest! {
    #[test]
    fn trend_matches_formula(alpha in 0.0..=1.0f64, bl in 0.0..5.0f64, bs in 0.0..5.0f64, t in 0u64..1000) {
        let tf = t as f64;
        let expected = alpha * (bl * (0.05 * tf).min(10.0) + bs * (0.5 * tf).sin().abs());
        let got = TrendSpec::new(alpha, bl, bs, -1.0);
        prop_assert!((got.evaluate(t) - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        prop_assert_eq!(got.contribution(t), -got.evaluate(t));
    }
}

#[test]
fn zero_fixed_point() {
    let scm = ar1(NoiseSpec::zero());
    let tr = &scm.sample_trajectory(3, 1, 0).unwrap()[0];
    assert!(tr.states().iter().all(|x| x[0] == 0.0));
    assert_eq!(tr.states().len(), 4);
}

#[test]
fn sampling_is_seed_deterministic() {
    let scm = build(BenchmarkId::new(BenchmarkKind::Loan, TrendKind::Linear, 0.7)).unwrap();
    let a = scm.sample_trajectory(20, 30, 9).unwrap();
    assert_eq!(a, scm.sample_trajectory(20, 30, 9).unwrap());
    assert_ne!(a, scm.sample_trajectory(20, 30, 10).unwrap());
}

#[test]
fn divergence_names_variable() {
    let eq = StructuralEquation::new(0, vec![Parent::lagged(0, 1)], Expr::linear(1.0, &[1e200]), NoiseSpec::zero());
    let scm = ScmSpec::new(vec![Variable::new("Boom")], vec![eq], None, 1, 0).unwrap();
    match scm.sample_trajectory(5, 1, 0) {
        Err(Error::Divergence { var, .. }) => assert_eq!(var, "Boom"),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn ar1_trend_mean_matches_closed_form() {
    let (a, c, t, tau) = (0.5, 1.0, 3, 4);
    let scm = ar1_trend(a, c, 0.0, 1.0).unwrap();
    let rows = vec![vec![0.8]];
    let xs = scm.forecast_uncertainty_set(Observed::new(&rows, t - 1), tau as usize + 1, 20_000, 5).unwrap();
    let (m, se) = mean_se(&xs.iter().map(|x| x[0]).collect::<Vec<_>>());
    let expected = ar1_trend_mean(a, c, 0.0, 0.8, t, tau);
    assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected} (se {se})");
}

#[test]
fn linear_anm_is_stationary() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap().with_burn_in(50);
    let trajs = scm.sample_trajectory(50, 4000, 2).unwrap();
    for (t, tau) in [(0, 10), (10, 40)] {
        for i in 0..3 {
            let diffs: Vec<f64> = trajs.iter().map(|tr| tr.states()[t + tau][i] - tr.states()[t][i]).collect();
            let (m, se) = mean_se(&diffs);
            assert!(m.abs() < 4.0 * se, "X{} drifts by {m} (se {se})", i + 1);
        }
    }
}

#[test]
fn non_descendants_on_linear_anm() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap();
    assert_eq!(scm.non_descendants(&[0]).unwrap(), Vec::<usize>::new());
    assert_eq!(scm.non_descendants(&[2]).unwrap(), vec![0, 1]);
    assert_eq!(scm.non_descendants(&[0, 1, 2]).unwrap(), Vec::<usize>::new());
    assert!(matches!(scm.non_descendants(&[7]), Err(Error::UnknownVariable(7))));
}

#[test]
fn full_hard_intervention_ignores_history() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap();
    let theta = vec![0.3, -1.2, 2.0];
    for tr in scm.sample_trajectory(3, 5, 1).unwrap() {
        let iv = Intervention::hard(vec![0, 1, 2], theta.clone(), 5);
        for x in scm.interventional_sample(tr.observed(3), &iv, 10, 4).unwrap() {
            assert_eq!(x, theta);
        }
    }
}

#[test]
fn identity_intervention_is_the_rollout() {
    let scm = ar1(NoiseSpec::zero());
    let rows = vec![vec![4.0]];
    let iv = Intervention::soft(vec![0], vec![0.0], 3);
    let xs = scm.interventional_sample(Observed::new(&rows, 0), &iv, 3, 0).unwrap();
    assert!(xs.iter().all(|x| x[0] == 0.5));
}

#[test]
fn soft_intervention_mean_on_ar1_trend() {
    let (a, c, theta) = (0.5, 1.0, 1.5);
    let scm = ar1_trend(a, c, 0.0, 1.0).unwrap();
    let rows = vec![vec![-0.4]];
    let iv = Intervention::soft(vec![0], vec![theta], 3);
    let xs = scm.interventional_sample(Observed::new(&rows, 0), &iv, 20_000, 8).unwrap();
    let (m, se) = mean_se(&xs.iter().map(|x| x[0]).collect::<Vec<_>>());
    let expected = ar1_trend_mean(a, c, 0.0, -0.4, 1, 2) + theta;
    assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected}");
}

#[test]
fn counterfactual_shift_on_linear_anm() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap();
    let tr = &scm.sample_trajectory(4, 1, 3).unwrap()[0];
    let obs = tr.observed(4);
    let null = scm.abduct_and_counterfactual(obs, &Intervention::soft(vec![0], vec![0.0], 4)).unwrap();
    for (a, b) in null.iter().zip(obs.last()) {
        assert_relative_eq!(*a, *b, max_relative = 1e-12);
    }
    let cf = scm.abduct_and_counterfactual(obs, &Intervention::soft(vec![0], vec![1.0], 4)).unwrap();
    assert_relative_eq!(cf[0] - obs.last()[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(cf[1] - obs.last()[1], -0.25, epsilon = 1e-12);
    assert_relative_eq!(cf[2] - obs.last()[2], 0.30, epsilon = 1e-12);
}

#[test]
fn counterfactual_requires_issue_time() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap();
    let tr = &scm.sample_trajectory(2, 1, 3).unwrap()[0];
    assert!(scm.abduct_and_counterfactual(tr.observed(2), &Intervention::soft(vec![0], vec![1.0], 5)).is_err());
}

#[test]
fn deterministic_counterfactual_equals_interventional() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap().with_noise(NoiseSpec::zero()).unwrap();
    let tr = &scm.sample_trajectory(3, 1, 0).unwrap()[0];
    let iv = Intervention::soft(vec![1], vec![0.7], 3);
    let cf = scm.abduct_and_counterfactual(tr.observed(3), &iv).unwrap();
    let obs = tr.observed(2);
    let iv_later = Intervention { apply_at: 3, ..iv };
    let xs = scm.interventional_sample(obs, &iv_later, 2, 1).unwrap();
    for x in xs {
        for (a, b) in x.iter().zip(&cf) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }
}

#[test]
fn deterministic_forecast_is_the_rollout() {
    let scm = ar1(NoiseSpec::zero());
    let rows = vec![vec![8.0]];
    let xs = scm.forecast_uncertainty_set(Observed::new(&rows, 0), 3, 20, 1).unwrap();
    assert_eq!(xs.len(), 20);
    assert!(xs.iter().all(|x| x[0] == 1.0));
}

#[test]
fn interventions_are_validated() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::Compas)).unwrap();
    let tr = &scm.sample_trajectory(1, 1, 0).unwrap()[0];
    let age = scm.index_of("A").unwrap();
    let bad = Intervention::soft(vec![age], vec![1.0], 2);
    assert!(matches!(scm.interventional_sample(tr.observed(1), &bad, 1, 0), Err(Error::InvalidIntervention(_))));
    let empty = Intervention::soft(vec![], vec![], 2);
    assert!(scm.interventional_sample(tr.observed(1), &empty, 1, 0).is_err());
}

#[test]
fn cyclic_graph_is_rejected() {
    let vars = vec![Variable::new("A"), Variable::new("B")];
    let eqs = vec![
        StructuralEquation::new(0, vec![Parent::now(1)], Expr::linear(0.0, &[1.0]), NoiseSpec::zero()),
        StructuralEquation::new(1, vec![Parent::now(0)], Expr::linear(0.0, &[1.0]), NoiseSpec::zero()),
    ];
    assert!(matches!(ScmSpec::new(vars, eqs, None, 1, 0), Err(Error::InvalidSpec(_))));
}

#[test]
fn spec_round_trips_through_json() {
    for kind in BenchmarkKind::ALL {
        let scm = build(BenchmarkId::new(kind, TrendKind::LinearSeasonal, 0.3)).unwrap();
        let text = serde_json::to_string(&scm).unwrap();
        let back: ScmSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.order(), scm.order());
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}

#[test]
fn hard_mode_overwrites() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap();
    let tr = &scm.sample_trajectory(2, 1, 0).unwrap()[0];
    let cf = scm.abduct_and_counterfactual(tr.observed(2), &Intervention { mode: Mode::Hard, ..Intervention::soft(vec![1], vec![9.0], 2) });
    assert_eq!(cf.unwrap()[1], 9.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn abduction_roundtrip(seed in 0u64..1000, t in 0usize..6, alpha in 0.0..=1.0f64) {
        for kind in BenchmarkKind::ALL {
            let scm = build(BenchmarkId::new(kind, TrendKind::LinearSeasonal, alpha)).unwrap();
            let tr = &scm.sample_trajectory(t, 1, seed).unwrap()[0];
            let obs = tr.observed(t);
            let x = scm.abduct_and_counterfactual(obs, &Intervention::soft(scm.actionable()[..1].to_vec(), vec![0.0], t as i64)).unwrap();
            for (a, b) in x.iter().zip(obs.last()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
