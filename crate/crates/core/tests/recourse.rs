use trecourse::analysis::ar1_trend_oracle;
use trecourse::benchmarks::{build, ar1_trend, BenchmarkId, BenchmarkKind};
use trecourse::noise::NoiseSpec;
use trecourse::predictors::{BoundedLinear, Classifier, Link};
use trecourse::recourse::{
    adversarial_trend_for, ball_samples, expected_response, solve, subsets, with_adversarial_trend, CostNorm, Method,
    RecourseConfig, ResponseMode, SetPolicy,
};
use trecourse::scm::{Intervention, Mode, Observed, Plan, ScmSpec, Trajectory};
use trecourse::Error;

fn sum_classifier(bias: f64) -> BoundedLinear {
    BoundedLinear::new(vec![1.0; 3], bias, 1.0, Link::Logistic).unwrap()
}

fn linear_anm() -> ScmSpec {
    build(BenchmarkId::stationary(BenchmarkKind::LinearAnm)).unwrap()
}

fn negatives(scm: &ScmSpec, h: &dyn Classifier, n: usize, seed: u64) -> Vec<Trajectory> {
    scm.sample_trajectory(0, 400, seed).unwrap().into_iter().filter(|t| h.predict_raw(&t.states()[0]) < 0.5).take(n).collect()
}

#[test]
fn plain_mode_is_shifted_prediction() {
    let scm = linear_anm();
    let h = sum_classifier(0.0);
    let rows = vec![vec![0.2, -0.4, 1.0], vec![-1.0, 0.3, -0.5]];
    let iv = Intervention::soft(vec![0, 2], vec![0.7, -0.2], 1);
    let er = expected_response(&scm, &h, Observed::new(&rows, 1), &iv, 0, ResponseMode::Plain, 5, 0).unwrap();
    assert_eq!(er, h.predict_raw(&[-0.3, 0.3, -0.7]));
}

#[test]
fn null_offsets_on_a_deterministic_process() {
    let scm = linear_anm().with_noise(NoiseSpec::zero()).unwrap();
    let h = sum_classifier(0.5);
    let rows = vec![vec![1.0, 2.0, -1.0]];
    let iv = Intervention::soft(vec![1], vec![0.0], 0);
    let rolled = scm.forecast_uncertainty_set(Observed::new(&rows, 0), 3, 1, 0).unwrap();
    for mode in [ResponseMode::Interventional, ResponseMode::Counterfactual, ResponseMode::Plain] {
        let er = expected_response(&scm, &h, Observed::new(&rows, 0), &iv, 3, mode, 4, 0).unwrap();
        assert!((er - h.predict_raw(&rolled[0])).abs() < 1e-12, "{mode:?}");
    }
}

#[test]
fn interventional_mean_matches_closed_form() {
    let (a, c, sd, beta, theta) = (0.5, 1.0, 1.0, 0.3, 0.8);
    let scm = ar1_trend(a, c, 0.0, sd).unwrap();
    let h = BoundedLinear::new(vec![beta], 0.0, 1.0, Link::Identity).unwrap();
    let rows = vec![vec![1.5]];
    let (t, tau) = (2i64, 3usize);
    let n = 20_000;
    let iv = Intervention::soft(vec![0], vec![theta], 0);
    let er = expected_response(&scm, &h, Observed::new(&rows, t), &iv, tau, ResponseMode::Interventional, n, 3).unwrap();
    // X^{t+tau} given x^t, plus theta, through the linear score.
    let mean: f64 = a.powi(tau as i32) * 1.5 + (1..=tau as i64).map(|i| a.powi((tau as i64 - i) as i32) * -c * (t + i) as f64).sum::<f64>();
    let var: f64 = (0..tau as i32).map(|i| a.powi(2 * i)).sum::<f64>() * sd * sd;
    let se = beta * (var / n as f64).sqrt();
    assert!((er - beta * (mean + theta)).abs() < 3.0 * se, "{er} vs {}", beta * (mean + theta));
}

#[test]
fn zero_radius_collapses_to_the_centre() {
    assert_eq!(ball_samples(3, &[0, 1, 2], 0.0, 20, 1), vec![vec![0.0; 3]]);
    let scm = linear_anm().with_noise(NoiseSpec::zero()).unwrap().with_burn_in(0);
    let h = sum_classifier(-1.0);
    let rows = vec![vec![-0.5, 0.2, 0.1]];
    let robust = RecourseConfig { epsilon: 0.0, ..RecourseConfig::new(Method::Sar) };
    let plain = RecourseConfig { n_uncertainty_samples: 1, ..robust.clone() };
    let a = solve(&scm, &h, Observed::new(&rows, 0), &robust, 4).unwrap();
    let b = solve(&scm, &h, Observed::new(&rows, 0), &plain, 4).unwrap();
    assert_eq!(a.theta, b.theta);
    assert!(a.converged);
}

#[test]
fn ball_samples_lie_on_the_sphere() {
    let s = ball_samples(4, &[0, 2, 3], 2.5, 20, 9);
    assert_eq!(s.len(), 20);
    assert_eq!(s[0], vec![0.0; 4]);
    for d in &s[1..] {
        assert_eq!(d[1], 0.0);
        assert!((d.iter().map(|v| v * v).sum::<f64>().sqrt() - 2.5).abs() < 1e-12);
    }
}

#[test]
fn ar1_trend_offsets_match_closed_form() {
    let h = BoundedLinear::new(vec![5.0], 0.0, 5.0, Link::Logistic).unwrap();
    for (a, c, t, tau, x_prev) in [(0.5, 1.0, 2i64, 0u32, -1.0), (0.3, 0.2, 10, 4, -2.0), (0.8, 1.5, 1, 9, -0.7)] {
        let scm = ar1_trend(a, c, -0.4, 0.0).unwrap();
        let rows = vec![vec![x_prev]];
        let cfg = RecourseConfig { tau: tau as usize + 1, ..RecourseConfig::new(Method::TSar) };
        let out = solve(&scm, &h, Observed::new(&rows, t - 1), &cfg, 0).unwrap();
        let oracle = ar1_trend_oracle(a, 5.0, c, -0.2, -0.2, x_prev, t as f64, tau);
        assert!(out.converged);
        assert!((out.theta[0] - oracle).abs() <= 0.05 * oracle.abs(), "{} vs {oracle}", out.theta[0]);
    }
}

#[test]
fn adversarial_step_trend() {
    assert!(adversarial_trend_for(&[0.0, 0.0], 3).is_empty());
    let trends = adversarial_trend_for(&[0.0, 1.5], 3);
    assert_eq!(trends.len(), 1);
    let (var, tr) = &trends[0];
    assert_eq!(*var, 1);
    assert_eq!(tr.contribution(2), 0.0);
    assert_eq!(tr.contribution(3), -1.5);
    assert_eq!(tr.contribution(50), -1.5);
}

#[test]
fn adversarial_trend_invalidates_robust_offsets() {
    let scm = ar1_trend(0.5, 0.0, -1.0, 1.0).unwrap().with_burn_in(30);
    let h = BoundedLinear::new(vec![5.0], 0.0, 5.0, Link::Logistic).unwrap();
    let tau = 4;
    for tr in negatives(&scm, &h, 5, 2) {
        let out = solve(&scm, &h, tr.observed(0), &RecourseConfig { epsilon: 3.0, ..RecourseConfig::new(Method::Sar) }, 1).unwrap();
        assert!(out.converged);
        let adv = with_adversarial_trend(&scm, &out.theta, tau).unwrap();
        let iv = out.intervention(0);
        let er = expected_response(&adv, &h, tr.observed(0), &iv, tau as usize, ResponseMode::Interventional, 500, 7).unwrap();
        assert!(er < 0.5, "response {er}");
    }
}

#[test]
fn converged_outcomes_are_sound_at_issue_time() {
    let scm = linear_anm();
    let h = sum_classifier(-0.5);
    for method in Method::ALL {
        let cfg = RecourseConfig { epsilon: 0.5, tau: 2, ..RecourseConfig::new(method) };
        for tr in negatives(&scm, &h, 4, 5) {
            let out = solve(&scm, &h, tr.observed(0), &cfg, tr.individual).unwrap();
            assert!(out.converged, "{method}");
            assert!(out.expected_response >= 0.5);
            let (mode, tau) = match method {
                Method::Imf => (ResponseMode::Plain, 0),
                Method::Car => (ResponseMode::Counterfactual, 0),
                Method::Sar => (ResponseMode::Interventional, 0),
                Method::TSar => (ResponseMode::Interventional, cfg.tau),
            };
            let n = 2000;
            let er = expected_response(&scm, &h, tr.observed(0), &out.intervention(0), tau, mode, n, 99).unwrap();
            let se = (er * (1.0 - er) / n as f64).sqrt();
            assert!(er >= 0.5 - 2.0 * se, "{method}: fresh response {er}");
        }
    }
}

#[test]
fn larger_radius_is_at_least_as_robust() {
    // Validity under a fresh epsilon-ball of perturbations, pooled over seeds.
    let scm = linear_anm();
    let h = sum_classifier(0.0);
    let mut valid = [0usize; 2];
    let mut total = 0;
    for seed in 0..10 {
        for tr in negatives(&scm, &h, 3, seed) {
            total += 1;
            for (j, eps) in [3.0, 5.0].into_iter().enumerate() {
                let cfg = RecourseConfig { epsilon: eps, ..RecourseConfig::new(Method::Car) };
                let out = solve(&scm, &h, tr.observed(0), &cfg, seed).unwrap();
                let probe = ball_samples(3, &[0, 1, 2], 3.0, 50, 1000 + seed);
                let obs = tr.observed(0);
                let u = scm.abduct(obs.window(), 0, obs.last()).unwrap();
                let plan = Plan::counterfactual(&scm, &out.features, Mode::Soft).unwrap();
                let ok = probe.iter().all(|dl| {
                    let shift: Vec<f64> = dl.iter().zip(&out.theta).map(|(a, b)| a + b).collect();
                    let x = scm.propagate(obs.window(), 0, obs.last(), &u, &plan, &shift, None).unwrap();
                    h.predict_raw(&x) >= 0.5
                });
                valid[j] += usize::from(out.converged && ok);
            }
        }
    }
    let (p3, p5) = (valid[0] as f64 / total as f64, valid[1] as f64 / total as f64);
    let se = ((p3 * (1.0 - p3) + p5 * (1.0 - p5)) / total as f64).sqrt();
    assert!(p5 >= p3 - 1.96 * se, "eps=5 {p5} vs eps=3 {p3}");
}

#[test]
fn solving_is_deterministic() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::NonlinearAnm)).unwrap();
    let h = sum_classifier(0.0);
    let tr = &negatives(&scm, &h, 1, 3)[0];
    for method in Method::ALL {
        let cfg = RecourseConfig { epsilon: 1.0, tau: 3, ..RecourseConfig::new(method) };
        assert_eq!(solve(&scm, &h, tr.observed(0), &cfg, 5).unwrap(), solve(&scm, &h, tr.observed(0), &cfg, 5).unwrap());
    }
}

#[test]
fn projection_respects_constraints() {
    let scm = build(BenchmarkId::stationary(BenchmarkKind::Loan)).unwrap();
    let h = BoundedLinear::new(vec![0.0, 0.0, 0.0, -0.3, -0.3, 0.3, 0.3], 0.0, 1.0, Link::Logistic).unwrap();
    let tr = &negatives(&scm, &h, 1, 0)[0];
    let cfg = RecourseConfig { eta: 3.0, ..RecourseConfig::new(Method::Imf) };
    let out = solve(&scm, &h, tr.observed(0), &cfg, 0).unwrap();
    let actionable = scm.actionable();
    assert!(out.theta.iter().enumerate().all(|(i, v)| *v == 0.0 || actionable.contains(&i)));
    assert_eq!(out.sparsity(), out.theta.iter().filter(|v| **v != 0.0).count());
    assert!((out.cost - CostNorm::L1.cost(&out.features, &out.features.iter().map(|&f| out.theta[f]).collect::<Vec<_>>())).abs() < 1e-12);
}

#[test]
fn subsets_are_ordered_by_size_then_lexicographically() {
    assert_eq!(subsets(&[1, 4, 6], 2), vec![vec![1], vec![4], vec![6], vec![1, 4], vec![1, 6], vec![4, 6]]);
    assert_eq!(subsets(&[2], usize::MAX), vec![vec![2]]);
}

#[test]
fn invalid_requests_are_rejected() {
    let scm = linear_anm();
    let h = sum_classifier(0.0);
    let rows = vec![vec![3.0, 3.0, 3.0]];
    let cfg = RecourseConfig::new(Method::Car);
    assert!(matches!(solve(&scm, &h, Observed::new(&rows, 0), &cfg, 0), Err(Error::InvalidArgument(_))));
    let rows = vec![vec![-3.0, -3.0, -3.0]];
    for bad in [
        RecourseConfig { gamma: 1.0, ..cfg.clone() },
        RecourseConfig { lambda: 0.0, ..cfg.clone() },
        RecourseConfig { epsilon: -1.0, ..cfg.clone() },
        RecourseConfig { tau: 0, ..RecourseConfig::new(Method::TSar) },
        RecourseConfig { policy: SetPolicy::Fixed(vec![]), ..cfg.clone() },
    ] {
        assert!(solve(&scm, &h, Observed::new(&rows, 0), &bad, 0).is_err(), "{bad:?}");
    }
    let compas = build(BenchmarkId::stationary(BenchmarkKind::Compas)).unwrap();
    let h4 = BoundedLinear::new(vec![0.0, 0.0, 0.0, 1.0], -100.0, 1.0, Link::Logistic).unwrap();
    let rows = vec![vec![1.0, 30.0, 1.0, 2.0]];
    let fixed = RecourseConfig { policy: SetPolicy::Fixed(vec![1]), ..cfg };
    assert!(matches!(solve(&compas, &h4, Observed::new(&rows, 0), &fixed, 0), Err(Error::InvalidIntervention(_))));
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
    assert_eq!(Method::TSar.to_string(), "t-sar");
    let cfg = RecourseConfig::new(Method::Sar);
    let back: RecourseConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(cfg.gamma, 0.02);
    assert_eq!((cfg.epochs, cfg.n_uncertainty_samples, cfg.lambda, cfg.eta), (30, 20, 1.0, 0.5));
}
