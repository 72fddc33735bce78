//! Robust recourse solvers sharing one min-max projected-gradient template:
//! the inner step picks the worst member of a finite uncertainty set, the
//! outer step descends `-ln ER + lambda * cost` over the offsets.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::Classifier;
use crate::rng::{self, purpose};
use crate::scm::{Intervention, Mode, Observed, Plan, ScmSpec, VarId};
use crate::trend::TrendSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Independently manipulable features: `h(x + theta)`.
    Imf,
    /// Counterfactual recourse over an epsilon-ball of perturbations.
    Car,
    /// Sub-population recourse over an epsilon-ball of perturbations.
    Sar,
    /// Sub-population recourse over the forecast at `t + tau`.
    TSar,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Imf, Self::Car, Self::Sar, Self::TSar];

    fn name(self) -> &'static str {
        match self {
            Self::Imf => "imf",
            Self::Car => "car",
            Self::Sar => "sar",
            Self::TSar => "t-sar",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weights", rename_all = "kebab-case")]
pub enum CostNorm {
    L1,
    L2,
    /// Weights indexed by variable id.
    WeightedL1(Vec<f64>),
}

impl CostNorm {
    /// Cost of offsets `theta` on variables `features`.
    pub fn cost(&self, features: &[VarId], theta: &[f64]) -> f64 {
        match self {
            Self::L1 => theta.iter().map(|v| v.abs()).sum(),
            Self::L2 => theta.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Self::WeightedL1(w) => features.iter().zip(theta).map(|(&f, v)| w[f] * v.abs()).sum(),
        }
    }

    /// Proximal operator of `step * cost` at `theta`.
    fn prox(&self, features: &[VarId], theta: &mut [f64], step: f64) {
        match self {
            Self::L1 => theta.iter_mut().for_each(|v| *v = soft_threshold(*v, step)),
            Self::WeightedL1(w) => {
                for (v, &f) in theta.iter_mut().zip(features) {
                    *v = soft_threshold(*v, step * w[f]);
                }
            }
            Self::L2 => {
                let n = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                let k = if n > step { 1.0 - step / n } else { 0.0 };
                theta.iter_mut().for_each(|v| *v *= k);
            }
        }
    }
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    v.signum() * (v.abs() - k).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum SetPolicy {
    Fixed(Vec<VarId>),
    /// All non-empty subsets of the actionable variables up to this size.
    Enumerate(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecourseConfig {
    pub method: Method,
    pub epsilon: f64,
    pub tau: usize,
    pub lambda: f64,
    pub eta: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Gradient steps per epoch.
    pub inner_iters: usize,
    pub n_uncertainty_samples: usize,
    /// Fresh-noise draws per anchor for sub-population methods.
    pub n_inner: usize,
    /// Bisection steps between the last invalid and first valid iterate.
    pub refine_steps: usize,
    pub cost: CostNorm,
    pub policy: SetPolicy,
    pub mode: Mode,
}

impl Default for RecourseConfig {
    fn default() -> Self {
        Self {
            method: Method::TSar,
            epsilon: 0.0,
            tau: 1,
            lambda: 1.0,
            eta: 0.5,
            gamma: 0.02,
            epochs: 30,
            inner_iters: 25,
            n_uncertainty_samples: 20,
            n_inner: 10,
            refine_steps: 30,
            cost: CostNorm::L1,
            policy: SetPolicy::Enumerate(usize::MAX),
            mode: Mode::Soft,
        }
    }
}

impl RecourseConfig {
    pub fn new(method: Method) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.lambda > 0.0 && self.eta > 0.0) {
            return bad("lambda and eta must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.epochs == 0 || self.inner_iters == 0 || self.n_uncertainty_samples == 0 || self.n_inner == 0 {
            return bad("iteration and sample counts must be positive");
        }
        if self.method == Method::TSar && self.tau == 0 {
            return bad("t-sar needs tau > 0");
        }
        Ok(())
    }

    /// Time at which the solved offsets are meant to be applied.
    pub fn apply_at(&self, t: i64) -> i64 {
        if self.method == Method::TSar { t + self.tau as i64 } else { t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseOutcome {
    pub method: Method,
    pub epsilon: f64,
    pub tau: usize,
    /// Offsets on every variable; zero outside the intervention set.
    pub theta: Vec<f64>,
    pub features: Vec<VarId>,
    pub mode: Mode,
    pub converged: bool,
    pub issue_time: i64,
    pub apply_at: i64,
    pub epochs_used: usize,
    /// Worst-case expected response over the uncertainty set.
    pub expected_response: f64,
    pub cost: f64,
}

impl RecourseOutcome {
    /// Number of non-zero offsets.
    pub fn sparsity(&self) -> usize {
        self.theta.iter().filter(|v| **v != 0.0).count()
    }

    pub fn intervention(&self, apply_at: i64) -> Intervention {
        let theta = self.features.iter().map(|&f| self.theta[f]).collect();
        Intervention { features: self.features.clone(), theta, mode: self.mode, apply_at }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Interventional,
    Counterfactual,
    Plain,
}

/// Expected classifier response to `iv` applied `tau` steps after `obs`.
///
/// Interventional mode averages over interventional draws; counterfactual
/// mode averages over rollouts re-evaluated with their realised noise (a
/// single point at `tau = 0`); plain mode shifts the rolled-out state.
#[allow(clippy::too_many_arguments)]
pub fn expected_response(
    scm: &ScmSpec,
    h: &dyn Classifier,
    obs: Observed,
    iv: &Intervention,
    tau: usize,
    mode: ResponseMode,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let at = obs.t + tau as i64;
    let iv = Intervention { apply_at: at, ..iv.clone() };
    let states = match mode {
        ResponseMode::Interventional => scm.interventional_sample(obs, &iv, n, seed)?,
        ResponseMode::Counterfactual | ResponseMode::Plain => {
            scm.validate_intervention(&iv)?;
            let plan = Plan::new(scm, &iv.features, iv.mode)?;
            let shift = iv.dense_theta(scm.dim());
            let draws = if tau == 0 { 1 } else { n };
            (0..draws as u64)
                .map(|k| {
                    let r = scm.rollout(obs, tau, seed, k)?;
                    if mode == ResponseMode::Plain {
                        Ok(r.state.iter().zip(&shift).map(|(a, b)| a + b).collect())
                    } else {
                        scm.propagate(&r.window, r.t, &r.state, &r.noise, &plan, &shift, None)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut total = 0.0;
    for x in &states {
        total += h.predict(x)?;
    }
    Ok(total / states.len() as f64)
}

/// Step trend `1{t >= tau} * (-theta_i)` per intervened variable, entering
/// with positive sign.
pub fn adversarial_trend_for(theta: &[f64], tau: u64) -> Vec<(VarId, TrendSpec)> {
    theta
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, TrendSpec::step(tau, -v)))
        .collect()
}

/// Applies [`adversarial_trend_for`] to `scm`, replacing existing trends on
/// the affected variables.
pub fn with_adversarial_trend(scm: &ScmSpec, theta: &[f64], tau: u64) -> Result<ScmSpec> {
    let mut out = scm.clone();
    for (i, tr) in adversarial_trend_for(theta, tau) {
        out = out.with_trend(i, Some(tr))?;
    }
    Ok(out)
}

/// Directions uniform on the sphere of radius `epsilon` over `coords`,
/// preceded by the centre.
pub fn ball_samples(d: usize, coords: &[VarId], epsilon: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; d]];
    if epsilon == 0.0 || coords.is_empty() {
        return out;
    }
    let mut rng = rng::stream(seed, &[purpose::BALL]);
    while out.len() < n {
        let g: Vec<f64> = coords.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let mut delta = vec![0.0; d];
        for (&c, v) in coords.iter().zip(&g) {
            delta[c] = epsilon * v / norm;
        }
        out.push(delta);
    }
    out
}

/// Anchor of the uncertainty set with the fresh noise used to evaluate it.
struct Anchor {
    window: Vec<Vec<f64>>,
    t: i64,
    state: Vec<f64>,
    /// Exogenous values: one per inner draw, or the abducted noise for CAR.
    noise: Vec<Vec<f64>>,
    /// Perturbation added to every variable (CAR only).
    delta: Vec<f64>,
}

enum Evaluation {
    Plain,
    Counterfactual,
    Interventional,
}

/// Finite uncertainty set for one issue state.
struct Problem<'a> {
    scm: &'a ScmSpec,
    h: &'a dyn Classifier,
    eval: Evaluation,
    anchors: Vec<Anchor>,
}

impl<'a> Problem<'a> {
    fn new(scm: &'a ScmSpec, h: &'a dyn Classifier, obs: Observed, cfg: &RecourseConfig, seed: u64) -> Result<Self> {
        let d = scm.dim();
        let perturbable: Vec<VarId> = (0..d).filter(|&i| !scm.variables()[i].categorical).collect();
        let window = obs.window()[obs.window().len().saturating_sub(scm.horizon())..].to_vec();
        let x = obs.last();
        let deltas = || ball_samples(d, &perturbable, cfg.epsilon, cfg.n_uncertainty_samples, seed);
        let fresh = |k: u64, t: i64| -> Vec<Vec<f64>> {
            let s = rng::derive(seed, &[purpose::INTERVENE, k]);
            (0..cfg.n_inner as u64).map(|j| scm.draw_noise(s, j, t, purpose::INTERVENE)).collect()
        };
        let (eval, anchors) = match cfg.method {
            Method::Imf => {
                let anchors = deltas()
                    .into_iter()
                    .map(|dl| Anchor {
                        window: window.clone(),
                        t: obs.t,
                        state: x.iter().zip(&dl).map(|(a, b)| a + b).collect(),
                        noise: vec![],
                        delta: vec![0.0; d],
                    })
                    .collect();
                (Evaluation::Plain, anchors)
            }
            Method::Car => {
                let u = scm.abduct(&window, obs.t, x)?;
                let anchors = deltas()
                    .into_iter()
                    .map(|dl| Anchor { window: window.clone(), t: obs.t, state: x.to_vec(), noise: vec![u.clone()], delta: dl })
                    .collect();
                (Evaluation::Counterfactual, anchors)
            }
            Method::Sar => {
                let u = scm.abduct(&window, obs.t, x)?;
                let all = Plan::counterfactual(scm, &[], Mode::Soft)?;
                let anchors = deltas()
                    .into_iter()
                    .enumerate()
                    .map(|(k, dl)| {
                        let state = scm.propagate(&window, obs.t, x, &u, &all, &dl, None)?;
                        Ok(Anchor { window: window.clone(), t: obs.t, state, noise: fresh(k as u64, obs.t), delta: vec![0.0; d] })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Evaluation::Interventional, anchors)
            }
            Method::TSar => {
                let anchors = scm
                    .forecast(obs, cfg.tau, cfg.n_uncertainty_samples, seed)?
                    .into_iter()
                    .enumerate()
                    .map(|(k, r)| Anchor { noise: fresh(k as u64, r.t), window: r.window, t: r.t, state: r.state, delta: vec![0.0; d] })
                    .collect();
                (Evaluation::Interventional, anchors)
            }
        };
        Ok(Self { scm, h, eval, anchors })
    }

    /// Expected response of anchor `k` and, optionally, its gradient with
    /// respect to the offsets on `plan.members()`.
    fn response(&self, plan: &Plan, k: usize, theta: &[f64], inner: usize, grad: Option<&mut [f64]>) -> Result<f64> {
        let a = &self.anchors[k];
        let d = self.scm.dim();
        let m = plan.members().len();
        let mut shift = a.delta.clone();
        for (&f, v) in plan.members().iter().zip(theta) {
            if plan.is_hard() {
                shift[f] = *v;
            } else {
                shift[f] += v;
            }
        }
        let mut jac = vec![0.0; d * m];
        let want = grad.is_some();
        let mut g_acc = vec![0.0; m];
        let mut total = 0.0;
        let eval_state = |x: &[f64], jac: &[f64], g_acc: &mut [f64]| {
            if want {
                let (p, gx) = self.h.gradient_raw(x);
                for c in 0..m {
                    g_acc[c] += (0..d).map(|i| gx[i] * jac[i * m + c]).sum::<f64>();
                }
                p
            } else {
                self.h.predict_raw(x)
            }
        };
        match self.eval {
            Evaluation::Plain => {
                let mut x = a.state.clone();
                for (c, (&f, v)) in plan.members().iter().zip(theta).enumerate() {
                    x[f] = if plan.is_hard() { *v } else { x[f] + v };
                    jac[f * m + c] = 1.0;
                }
                total = eval_state(&x, &jac, &mut g_acc);
            }
            Evaluation::Counterfactual => {
                let x = self.scm.propagate(&a.window, a.t, &a.state, &a.noise[0], plan, &shift, want.then_some(&mut jac[..]))?;
                total = eval_state(&x, &jac, &mut g_acc);
            }
            Evaluation::Interventional => {
                let draws = if plan.needs_noise() { inner.min(a.noise.len()) } else { 1 };
                for u in &a.noise[..draws] {
                    let x = self.scm.propagate(&a.window, a.t, &a.state, u, plan, &shift, want.then_some(&mut jac[..]))?;
                    total += eval_state(&x, &jac, &mut g_acc);
                }
                total /= draws as f64;
                g_acc.iter_mut().for_each(|g| *g /= draws as f64);
            }
        }
        if let Some(g) = grad {
            g.copy_from_slice(&g_acc);
        }
        Ok(total)
    }

    /// Index and value of the smallest expected response; ties go to the
    /// first index.
    fn worst(&self, plan: &Plan, theta: &[f64], inner: usize) -> Result<(usize, f64)> {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.anchors.len() {
            let r = self.response(plan, k, theta, inner, None)?;
            if r < best.1 {
                best = (k, r);
            }
        }
        Ok(best)
    }
}

/// Solver state for one intervention set.
struct SetResult {
    features: Vec<VarId>,
    theta: Vec<f64>,
    converged: bool,
    epochs_used: usize,
    response: f64,
    cost: f64,
}

const VALID: f64 = 0.5;
const LOSS_TOL: f64 = 1e-4;
const STALL_WINDOW: usize = 5;

fn project(scm: &ScmSpec, features: &[VarId], theta: &mut [f64], mode: Mode) {
    for (v, &f) in theta.iter_mut().zip(features) {
        let var = &scm.variables()[f];
        if !var.actionable {
            *v = 0.0;
        } else if var.monotone && mode == Mode::Soft {
            *v = v.max(0.0);
        }
    }
}

fn solve_set(problem: &Problem, features: &[VarId], cfg: &RecourseConfig) -> Result<SetResult> {
    let scm = problem.scm;
    let plan = match problem.eval {
        Evaluation::Counterfactual => Plan::counterfactual(scm, features, cfg.mode)?,
        _ => Plan::new(scm, features, cfg.mode)?,
    };
    let m = features.len();
    let inner = cfg.n_inner;
    let mut theta: Vec<f64> = match cfg.mode {
        Mode::Soft => vec![0.0; m],
        Mode::Hard => features.iter().map(|&f| problem.anchors[0].state[f]).collect(),
    };
    let mut lambda = cfg.lambda;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_invalid = theta.clone();
    let mut grad = vec![0.0; m];
    let done = |theta: Vec<f64>, response: f64, converged: bool, epochs_used: usize| SetResult {
        cost: cfg.cost.cost(features, &theta),
        features: features.to_vec(),
        theta,
        converged,
        epochs_used,
        response,
    };
    for epoch in 0..cfg.epochs {
        let mut prev_loss = f64::INFINITY;
        let mut stall = 0;
        for _ in 0..cfg.inner_iters {
            let (k, er) = problem.worst(&plan, &theta, inner)?;
            if er >= VALID {
                let (theta, er) = refine(problem, &plan, &last_invalid, theta, er, cfg)?;
                return Ok(done(theta, er, true, epoch + 1));
            }
            if best.as_ref().map_or(true, |(b, _)| er > *b) {
                best = Some((er, theta.clone()));
            }
            let er_k = problem.response(&plan, k, &theta, inner, Some(&mut grad))?;
            let loss = -er_k.max(1e-300).ln() + lambda * cfg.cost.cost(features, &theta);
            if (prev_loss - loss).abs() < LOSS_TOL {
                stall += 1;
                if stall >= STALL_WINDOW {
                    break;
                }
            } else {
                stall = 0;
            }
            prev_loss = loss;
            last_invalid = theta.clone();
            let scale = cfg.eta / er_k.max(1e-300);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t += scale * g;
            }
            if cfg.mode == Mode::Soft {
                cfg.cost.prox(features, &mut theta, cfg.eta * lambda);
            }
            project(scm, features, &mut theta, cfg.mode);
        }
        lambda *= cfg.gamma;
    }
    let (er, theta) = best.expect("at least one iteration ran");
    Ok(done(theta, er, false, cfg.epochs))
}

/// Bisects on the segment from `lo` (invalid) to `hi` (valid) for the
/// point closest to `lo` that stays valid.
fn refine(
    problem: &Problem,
    plan: &Plan,
    lo: &[f64],
    hi: Vec<f64>,
    hi_er: f64,
    cfg: &RecourseConfig,
) -> Result<(Vec<f64>, f64)> {
    let point = |s: f64| -> Vec<f64> { lo.iter().zip(&hi).map(|(a, b)| a + s * (b - a)).collect() };
    let (mut a, mut b) = (0.0, 1.0);
    let mut best = (hi.clone(), hi_er);
    for _ in 0..cfg.refine_steps {
        let mid = 0.5 * (a + b);
        let th = point(mid);
        let (_, er) = problem.worst(plan, &th, cfg.n_inner)?;
        if er >= VALID {
            b = mid;
            best = (th, er);
        } else {
            a = mid;
        }
    }
    // Only accept a cheaper point.
    let cost = |t: &[f64]| cfg.cost.cost(plan.members(), t);
    if cost(&best.0) <= cost(&hi) { Ok(best) } else { Ok((hi, hi_er)) }
}

/// Non-empty subsets of `items` up to `max` elements, by size then
/// lexicographically.
pub fn subsets(items: &[VarId], max: usize) -> Vec<Vec<VarId>> {
    let n = items.len();
    let mut all: Vec<Vec<VarId>> = (1u64..(1 << n))
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| items[i]).collect::<Vec<_>>())
        .filter(|s: &Vec<VarId>| s.len() <= max)
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

/// Solves for the cheapest robust offsets for the individual whose history
/// is `obs`.
pub fn solve(scm: &ScmSpec, h: &dyn Classifier, obs: Observed, cfg: &RecourseConfig, seed: u64) -> Result<RecourseOutcome> {
    cfg.validate()?;
    if h.predict(obs.last())? >= VALID {
        return Err(Error::InvalidArgument("individual is already favourably classified".into()));
    }
    let sets = match &cfg.policy {
        SetPolicy::Fixed(f) => {
            let mut f = f.clone();
            f.sort_unstable();
            if f.is_empty() {
                return Err(Error::InvalidIntervention("empty feature set".into()));
            }
            for &i in &f {
                if !scm.variables().get(i).ok_or(Error::UnknownVariable(i))?.actionable {
                    return Err(Error::InvalidIntervention(format!("`{}` is not actionable", scm.variables()[i].name)));
                }
            }
            vec![f]
        }
        SetPolicy::Enumerate(max) => subsets(&scm.actionable(), *max),
    };
    if sets.is_empty() {
        return Err(Error::InvalidIntervention("no actionable variables".into()));
    }
    let problem = Problem::new(scm, h, obs, cfg, seed)?;
    let mut chosen: Option<SetResult> = None;
    for set in sets {
        let r = solve_set(&problem, &set, cfg)?;
        let better = match &chosen {
            None => true,
            Some(c) => match (r.converged, c.converged) {
                (true, false) => true,
                (false, true) => false,
                // Sets arrive by size then lexicographically, so strict
                // improvement keeps the tie-break.
                (true, true) => r.cost < c.cost,
                (false, false) => r.response > c.response,
            },
        };
        if better {
            chosen = Some(r);
        }
    }
    let r = chosen.expect("at least one set");
    let mut theta = vec![0.0; scm.dim()];
    for (&f, &v) in r.features.iter().zip(&r.theta) {
        theta[f] = v;
    }
    Ok(RecourseOutcome {
        method: cfg.method,
        epsilon: cfg.epsilon,
        tau: cfg.tau,
        theta,
        features: r.features,
        mode: cfg.mode,
        converged: r.converged,
        issue_time: obs.t,
        apply_at: cfg.apply_at(obs.t),
        epochs_used: r.epochs_used,
        expected_response: r.response,
        cost: r.cost,
    })
}
