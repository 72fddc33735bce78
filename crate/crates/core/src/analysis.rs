//! Validity over time, invalidation rates, closed-form oracles and
//! verifiers for the stability bounds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::predictors::Classifier;
use crate::recourse::{Method, RecourseOutcome};
use crate::rng;
use crate::scm::{Intervention, Observed, Plan, ScmSpec};
use crate::trend::TrendSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRecord {
    pub method: Method,
    pub epsilon: f64,
    pub issue_time: i64,
    pub eval_time: i64,
    pub n: usize,
    pub validity: f64,
    /// Mean cost over valid outcomes; 0 when none is valid.
    pub mean_cost: f64,
    pub mean_sparsity: f64,
}

/// How the state at the evaluation time is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Roll each individual forward from their own history and apply the
    /// offsets with the rollout's realised noise.
    Conditional,
    /// Draw fresh individuals from the process at the evaluation time.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Draws per individual and lag.
    pub rollouts: usize,
    pub mode: EvalMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rollouts: 100, mode: EvalMode::Conditional }
    }
}

/// Validity threshold on the expected response.
pub const VALID: f64 = 0.5;

/// Mean response of one outcome `tau` steps after its issue time.
pub fn outcome_response(
    scm: &ScmSpec,
    h: &dyn Classifier,
    obs: Observed,
    outcome: &RecourseOutcome,
    tau: usize,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    if cfg.rollouts == 0 {
        return Err(Error::InvalidArgument("rollouts must be positive".into()));
    }
    let plan = Plan::new(scm, &outcome.features, outcome.mode)?;
    let at = obs.t + tau as i64;
    let mut total = 0.0;
    let draws = if tau == 0 && cfg.mode == EvalMode::Conditional { 1 } else { cfg.rollouts };
    for k in 0..draws as u64 {
        let r = match cfg.mode {
            EvalMode::Conditional => scm.rollout(obs, tau, seed, k)?,
            EvalMode::Marginal => {
                if at < 0 {
                    return Err(Error::InvalidArgument("marginal evaluation needs t + tau >= 0".into()));
                }
                let tr = scm.sample_trajectory(at as usize, 1, rng::derive(seed, &[k]))?;
                scm.rollout(tr[0].observed(at as usize), 0, seed, k)?
            }
        };
        let x = scm.propagate(&r.window, r.t, &r.state, &r.noise, &plan, &outcome.theta, None)?;
        total += h.predict(&x)?;
    }
    Ok(total / draws as f64)
}

/// Validity per lag for outcomes issued at a common time. Unconverged
/// outcomes count as invalid.
pub fn validity_over_time(
    scm: &ScmSpec,
    h: &dyn Classifier,
    cases: &[(Observed, &RecourseOutcome)],
    lags: &[usize],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<ValidityRecord>> {
    let first = cases.first().ok_or_else(|| Error::InvalidArgument("no outcomes".into()))?;
    let issue = first.0.t;
    if cases.iter().any(|(o, _)| o.t != issue) {
        return Err(Error::InvalidArgument("outcomes must share an issue time".into()));
    }
    lags.iter()
        .map(|&tau| {
            let mut valid = 0usize;
            let mut cost = 0.0;
            let mut sparsity = 0.0;
            for (j, (obs, out)) in cases.iter().enumerate() {
                if !out.converged {
                    continue;
                }
                let s = rng::derive(seed, &[j as u64, tau as u64]);
                if outcome_response(scm, h, *obs, out, tau, cfg, s)? >= VALID {
                    valid += 1;
                    cost += out.cost;
                    sparsity += out.sparsity() as f64;
                }
            }
            let denom = valid.max(1) as f64;
            Ok(ValidityRecord {
                method: first.1.method,
                epsilon: first.1.epsilon,
                issue_time: issue,
                eval_time: issue + tau as i64,
                n: cases.len(),
                validity: valid as f64 / cases.len() as f64,
                mean_cost: cost / denom,
                mean_sparsity: sparsity / denom,
            })
        })
        .collect()
}

/// Monte-Carlo `E|h'(x^{t+tau}) - h(x^t)|` with both states drawn from the
/// interventional distribution of `iv`; draws are paired by index.
#[allow(clippy::too_many_arguments)]
pub fn invalidation_rate(
    scm: &ScmSpec,
    h_t: &dyn Classifier,
    h_ttau: &dyn Classifier,
    obs: Observed,
    iv: &Intervention,
    tau: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let now = Intervention { apply_at: obs.t, ..iv.clone() };
    let later = Intervention { apply_at: obs.t + tau as i64, ..iv.clone() };
    let a = scm.interventional_sample(obs, &now, n, seed)?;
    let b = scm.interventional_sample(obs, &later, n, rng::derive(seed, &[tau as u64]))?;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(&b) {
        total += (h_ttau.predict(y)? - h_t.predict(x)?).abs();
    }
    Ok(total / n as f64)
}

/// Optimal offset for the one-dimensional linear-Gaussian process with
/// linear trend, observed at `t - 1` and intervened at `t + tau`.
#[allow(clippy::too_many_arguments)]
pub fn ar1_trend_oracle(alpha: f64, _beta: f64, c: f64, mu_m: f64, mu_x: f64, x_prev: f64, t: f64, tau: u32) -> f64 {
    let drift: f64 = (0..=tau)
        .map(|i| alpha.powi((tau - i) as i32) * (-c * (t + i as f64) + mu_m + mu_x))
        .sum();
    -alpha.powi(tau as i32 + 1) * x_prev - drift
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Mean empirical change (of the response or the cost).
    pub empirical: f64,
    pub bound: f64,
    /// Mean of the per-sample gaps `bound_j - |change_j|`.
    pub slack: f64,
    /// Half-width of the 95% interval of the slack.
    pub ci: f64,
    /// The bound with `k sqrt(d)` on the first term only, when it applies.
    pub stated_bound: Option<f64>,
    pub k: f64,
    pub d: usize,
    pub t: f64,
    pub tau: f64,
    pub n: usize,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.slack >= -self.ci
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceWeights {
    pub w: Vec<f64>,
    pub bound: f64,
}

impl PreferenceWeights {
    pub fn new(w: Vec<f64>, bound: f64) -> Result<Self> {
        check_box("weight", &w, bound)?;
        Ok(Self { w, bound })
    }

    /// `<|x_hat - x|, w>`.
    pub fn cost(&self, x_hat: &[f64], x: &[f64]) -> f64 {
        x_hat.iter().zip(x).zip(&self.w).map(|((a, b), w)| (a - b).abs() * w).sum()
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    norm(a.iter().zip(b).map(|(x, y)| x - y))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_box(what: &str, v: &[f64], k: f64) -> Result<()> {
    match v.iter().find(|x| !(x.abs() <= k)) {
        Some(x) => Err(Error::BoundPrecondition(format!("{what} {x} outside [-{k}, {k}]"))),
        None => Ok(()),
    }
}

fn check_dims(d: usize, vs: &[&[f64]]) -> Result<()> {
    match vs.iter().find(|v| v.len() != d) {
        Some(v) => Err(Error::DimensionMismatch { expected: d, got: v.len() }),
        None => Ok(()),
    }
}

fn summarize(changes: &[f64], bounds: &[f64]) -> (f64, f64, f64, f64) {
    let n = changes.len() as f64;
    let gaps: Vec<f64> = bounds.iter().zip(changes).map(|(b, c)| b - c.abs()).collect();
    let mean_gap = gaps.iter().sum::<f64>() / n;
    let var = if gaps.len() > 1 {
        gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let empirical = changes.iter().map(|c| c.abs()).sum::<f64>() / n;
    let bound = bounds.iter().sum::<f64>() / n;
    (empirical, bound, mean_gap, 1.96 * (var / n).sqrt())
}

/// Invalidation of a bounded linear score `<beta, x>` between two times
/// against `k sqrt(d) (|beta' - beta| + E|x' - x|)`. States are paired by
/// index.
pub fn linear_validity_bound(
    k: f64,
    beta_t: &[f64],
    beta_ttau: &[f64],
    x_t: &[Vec<f64>],
    x_ttau: &[Vec<f64>],
) -> Result<BoundReport> {
    let d = beta_t.len();
    if x_t.is_empty() || x_t.len() != x_ttau.len() {
        return Err(Error::InvalidArgument("need equally many non-empty state samples".into()));
    }
    check_dims(d, &[beta_ttau])?;
    check_box("coefficient", beta_t, k)?;
    check_box("coefficient", beta_ttau, k)?;
    let kd = k * (d as f64).sqrt();
    let db = diff_norm(beta_ttau, beta_t);
    let mut changes = Vec::with_capacity(x_t.len());
    let mut bounds = Vec::with_capacity(x_t.len());
    let mut dx_mean = 0.0;
    for (a, b) in x_t.iter().zip(x_ttau) {
        check_dims(d, &[a, b])?;
        check_box("feature", a, k)?;
        check_box("feature", b, k)?;
        let dx = diff_norm(b, a);
        dx_mean += dx / x_t.len() as f64;
        changes.push(dot(beta_ttau, b) - dot(beta_t, a));
        bounds.push(kd * (db + dx));
    }
    let (empirical, bound, slack, ci) = summarize(&changes, &bounds);
    Ok(BoundReport {
        empirical,
        bound,
        slack,
        ci,
        stated_bound: Some(kd * db + dx_mean),
        k,
        d,
        t: 0.0,
        tau: 0.0,
        n: x_t.len(),
    })
}

/// Largest per-feature trend change `max_i |m_i(t + tau) - m_i(t)|`.
pub fn max_trend_change(trends: &[TrendSpec], t: u64, tau: u64) -> f64 {
    trends
        .iter()
        .map(|m| (m.contribution(t + tau) - m.contribution(t)).abs())
        .fold(0.0, f64::max)
}

/// As [`linear_validity_bound`] for a trend-stationary process whose stationary
/// part `s` is shared by both times: `x = s + m(t)`. Bound
/// `k (sqrt(d) |beta' - beta| + d max_i |m_i(t + tau) - m_i(t)|)`.
pub fn trend_validity_bound(
    k: f64,
    beta_t: &[f64],
    beta_ttau: &[f64],
    trends: &[TrendSpec],
    t: u64,
    tau: u64,
    stationary: &[Vec<f64>],
) -> Result<BoundReport> {
    let d = beta_t.len();
    if trends.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: trends.len() });
    }
    if stationary.is_empty() {
        return Err(Error::InvalidArgument("need state samples".into()));
    }
    check_dims(d, &[beta_ttau])?;
    check_box("coefficient", beta_t, k)?;
    check_box("coefficient", beta_ttau, k)?;
    let shifted = |s: &[f64], at: u64| -> Vec<f64> { s.iter().zip(trends).map(|(v, m)| v + m.contribution(at)).collect() };
    let db = diff_norm(beta_ttau, beta_t);
    let bound_value = k * ((d as f64).sqrt() * db + d as f64 * max_trend_change(trends, t, tau));
    let mut changes = Vec::with_capacity(stationary.len());
    for s in stationary {
        check_dims(d, &[s])?;
        let (a, b) = (shifted(s, t), shifted(s, t + tau));
        check_box("feature", &a, k)?;
        check_box("feature", &b, k)?;
        changes.push(dot(beta_ttau, &b) - dot(beta_t, &a));
    }
    let bounds = vec![bound_value; changes.len()];
    let (empirical, bound, slack, ci) = summarize(&changes, &bounds);
    Ok(BoundReport {
        empirical,
        bound,
        slack,
        ci,
        stated_bound: None,
        k,
        d,
        t: t as f64,
        tau: tau as f64,
        n: changes.len(),
    })
}

/// Change of the cost `<|x_hat - x|, w>` between two times against
/// `k sqrt(d) E[|w' - w| + ||x_hat' - x'| - |x_hat - x||]`. Requires every
/// weight and every displacement `|x_hat_i - x_i|` within `k`.
pub fn linear_cost_bound(
    k: f64,
    w_t: &PreferenceWeights,
    w_ttau: &PreferenceWeights,
    factual_t: &[Vec<f64>],
    counterfactual_t: &[Vec<f64>],
    factual_ttau: &[Vec<f64>],
    counterfactual_ttau: &[Vec<f64>],
) -> Result<BoundReport> {
    let d = w_t.w.len();
    let n = factual_t.len();
    if n == 0 || [counterfactual_t.len(), factual_ttau.len(), counterfactual_ttau.len()].iter().any(|&m| m != n) {
        return Err(Error::InvalidArgument("need equally many non-empty state samples".into()));
    }
    check_dims(d, &[&w_ttau.w])?;
    check_box("weight", &w_t.w, k)?;
    check_box("weight", &w_ttau.w, k)?;
    let kd = k * (d as f64).sqrt();
    let dw = diff_norm(&w_ttau.w, &w_t.w);
    let mut changes = Vec::with_capacity(n);
    let mut bounds = Vec::with_capacity(n);
    for j in 0..n {
        let (x, xh, y, yh) = (&factual_t[j], &counterfactual_t[j], &factual_ttau[j], &counterfactual_ttau[j]);
        check_dims(d, &[x, xh, y, yh])?;
        let a: Vec<f64> = xh.iter().zip(x.iter()).map(|(p, q)| (p - q).abs()).collect();
        let b: Vec<f64> = yh.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()).collect();
        check_box("displacement", &a, k)?;
        check_box("displacement", &b, k)?;
        changes.push(dot(&w_ttau.w, &b) - dot(&w_t.w, &a));
        bounds.push(kd * (dw + diff_norm(&b, &a)));
    }
    let (empirical, bound, slack, ci) = summarize(&changes, &bounds);
    Ok(BoundReport { empirical, bound, slack, ci, stated_bound: None, k, d, t: 0.0, tau: 0.0, n })
}

/// Pooled two-proportion z-test; returns the two-sided p-value.
pub fn two_proportion_test(success_a: usize, n_a: usize, success_b: usize, n_b: usize) -> Result<f64> {
    if n_a == 0 || n_b == 0 || success_a > n_a || success_b > n_b {
        return Err(Error::InvalidArgument("invalid proportion counts".into()));
    }
    let (pa, pb) = (success_a as f64 / n_a as f64, success_b as f64 / n_b as f64);
    let pooled = (success_a + success_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return Ok(if pa == pb { 1.0 } else { 0.0 });
    }
    let z = (pa - pb).abs() / se;
    Ok(2.0 * (1.0 - Normal::standard().cdf(z)))
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 { 0.0 } else { cov / (va * vb).sqrt() }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}
