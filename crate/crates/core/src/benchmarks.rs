//! Ready-made processes: two synthetic additive-noise models and three
//! semi-realistic graphs (Adult, COMPAS, Loan).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::predictors::{fit_regressor, sigmoid, Regressor, TrainConfig};
use crate::rng::{self, purpose};
use crate::scm::{
    Expr, Interaction, LabelSpec, Normalizer, Parent, ScmSpec, StructuralEquation as Eq, Variable,
};
use crate::trend::TrendSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    LinearAnm,
    NonlinearAnm,
    Adult,
    Compas,
    Loan,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 5] = [Self::LinearAnm, Self::NonlinearAnm, Self::Adult, Self::Compas, Self::Loan];

    pub fn is_synthetic(self) -> bool {
        matches!(self, Self::LinearAnm | Self::NonlinearAnm)
    }

    /// `(beta_linear, beta_seasonal)` used when the component is switched on.
    pub fn trend_betas(self) -> (f64, f64) {
        match self {
            Self::LinearAnm => (1.0, 1.5),
            Self::NonlinearAnm => (2.0, 5.0),
            Self::Adult => (1.0, 1.0),
            Self::Compas => (0.3, 1.0),
            Self::Loan => (0.5, 5.0),
        }
    }

    /// Variable carrying the trend and the sign it enters with.
    pub fn trend_target(self) -> (usize, f64) {
        match self {
            Self::LinearAnm | Self::NonlinearAnm => (2, -1.0),
            Self::Adult => (5, -1.0),
            Self::Compas => (3, 1.0),
            Self::Loan => (5, -1.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::LinearAnm => "linear-anm",
            Self::NonlinearAnm => "nonlinear-anm",
            Self::Adult => "adult",
            Self::Compas => "compas",
            Self::Loan => "loan",
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown benchmark `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendKind {
    None,
    Linear,
    Seasonal,
    #[serde(rename = "linear+seasonal")]
    LinearSeasonal,
}

impl TrendKind {
    fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Linear => "linear",
            Self::Seasonal => "seasonal",
            Self::LinearSeasonal => "linear+seasonal",
        }
    }
}

impl fmt::Display for TrendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Self::None, Self::Linear, Self::Seasonal, Self::LinearSeasonal]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trend kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkId {
    pub kind: BenchmarkKind,
    pub trend: TrendKind,
    pub alpha: f64,
}

impl BenchmarkId {
    pub fn new(kind: BenchmarkKind, trend: TrendKind, alpha: f64) -> Self {
        Self { kind, trend, alpha }
    }

    pub fn stationary(kind: BenchmarkKind) -> Self {
        Self::new(kind, TrendKind::None, 0.0)
    }

    pub fn trend_spec(&self) -> TrendSpec {
        let (bl, bs) = self.kind.trend_betas();
        let (_, sign) = self.kind.trend_target();
        let (bl, bs) = match self.trend {
            TrendKind::None => (0.0, 0.0),
            TrendKind::Linear => (bl, 0.0),
            TrendKind::Seasonal => (0.0, bs),
            TrendKind::LinearSeasonal => (bl, bs),
        };
        let alpha = if self.trend == TrendKind::None { 0.0 } else { self.alpha };
        TrendSpec::new(alpha, bl, bs, sign)
    }
}

pub fn build(id: BenchmarkId) -> Result<ScmSpec> {
    if !(0.0..=1.0).contains(&id.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", id.alpha)));
    }
    let (target, _) = id.kind.trend_target();
    let base = match id.kind {
        BenchmarkKind::LinearAnm => linear_anm(),
        BenchmarkKind::NonlinearAnm => nonlinear_anm(),
        BenchmarkKind::Adult => adult().clone(),
        BenchmarkKind::Compas => compas().clone(),
        BenchmarkKind::Loan => loan(),
    };
    base.with_trend(target, Some(id.trend_spec()))
}

fn lag1(i: usize) -> Parent {
    Parent::lagged(i, 1)
}

fn now(i: usize) -> Parent {
    Parent::now(i)
}

fn anm_label() -> LabelSpec {
    LabelSpec {
        weights: vec![1.0; 3],
        interactions: vec![],
        intercept: 0.0,
        scale: 2.5,
        normalizer: Normalizer::EmpiricalMean,
    }
}

fn anm_vars() -> Vec<Variable> {
    (1..=3).map(|i| Variable::new(&format!("X{i}")).actionable()).collect()
}

/// Slot 0 is the own lag; slot 1 is `X1^t` where present.
fn linear_anm() -> ScmSpec {
    let eqs = vec![
        Eq::new(0, vec![lag1(0)], Expr::linear(0.0, &[0.5]), NoiseSpec::equal_mixture(&[(-1.0, 1.5), (1.0, 1.0)])),
        Eq::new(1, vec![lag1(1), now(0)], Expr::linear(0.0, &[0.5, -0.25]), NoiseSpec::gaussian(0.0, 0.1)),
        // Both X1 terms are kept as written.
        Eq::new(
            2,
            vec![lag1(2), now(0)],
            Expr::sum(vec![
                Expr::scaled(0.5, Expr::p(0)),
                Expr::scaled(0.05, Expr::p(1)),
                Expr::scaled(0.25, Expr::p(1)),
                Expr::Noise,
            ]),
            NoiseSpec::gaussian(0.0, 1.0),
        ),
    ];
    ScmSpec::new(anm_vars(), eqs, Some(anm_label()), 1, 10).expect("linear ANM is valid")
}

fn nonlinear_anm() -> ScmSpec {
    let eqs = vec![
        Eq::new(0, vec![lag1(0)], Expr::linear(0.0, &[0.5]), NoiseSpec::equal_mixture(&[(-2.0, 1.5), (1.0, 1.0)])),
        Eq::new(
            1,
            vec![lag1(1), now(0)],
            Expr::sum(vec![
                Expr::scaled(0.5, Expr::p(0)),
                Expr::scaled(-3.0, Expr::sigmoid(Expr::scaled(2.0, Expr::p(1)))),
                Expr::Noise,
            ]),
            NoiseSpec::gaussian(0.0, 0.1),
        ),
        Eq::new(
            2,
            vec![lag1(2), now(0)],
            Expr::sum(vec![
                Expr::scaled(0.5, Expr::p(0)),
                Expr::scaled(0.05, Expr::p(1)),
                Expr::scaled(0.25, Expr::product(vec![Expr::p(1), Expr::p(1)])),
                Expr::Noise,
            ]),
            NoiseSpec::gaussian(0.0, 1.0),
        ),
    ];
    ScmSpec::new(anm_vars(), eqs, Some(anm_label()), 1, 10).expect("nonlinear ANM is valid")
}

/// Copies the variable forward after its first draw.
fn frozen_draw(i: usize, noise: NoiseSpec) -> Eq {
    Eq::new(i, vec![], Expr::Noise, noise).frozen()
}

fn net(f: &Regressor, inputs: Vec<Expr>) -> Expr {
    Expr::Net(Box::new(f.clone()), inputs)
}

const REFERENCE_SAMPLES: usize = 2000;
const REFERENCE_SEED: u64 = 0x5eed_ad01;

fn reference_cfg(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 50, epochs: 60, learning_rate: 0.01, seed, hidden: vec![8] }
}

fn fit_reference(xs: &[Vec<f64>], f: impl Fn(&[f64]) -> f64, seed: u64) -> Regressor {
    let ys: Vec<f64> = xs.iter().map(|x| f(x)).collect();
    fit_regressor(xs, &ys, &reference_cfg(seed)).expect("reference data is well formed")
}

/// Intercept that centres the label score at its median on a `t = 0` sample.
fn centring_intercept(scm: &ScmSpec, seed: u64) -> f64 {
    let label = scm.label().expect("label attached");
    let trajs = scm.sample_trajectory(0, REFERENCE_SAMPLES, seed).expect("reference sample");
    let mut scores: Vec<f64> = trajs.iter().map(|tr| label.score(&tr.states()[0])).collect();
    scores.sort_by(f64::total_cmp);
    -scores[scores.len() / 2]
}

// Reference mechanisms for Adult; inputs (S, A, US[, M]).
fn adult_m(x: &[f64]) -> f64 {
    -0.4 + 0.6 * x[0] + 1.5 * (0.8 * x[1]).tanh() + 0.3 * x[2]
}
fn adult_e(x: &[f64]) -> f64 {
    0.5 + 0.3 * x[0] + 0.6 * (x[1]).tanh() + 0.4 * x[2] + 0.3 * x[3]
}
fn adult_h(x: &[f64]) -> f64 {
    1.0 + 0.5 * x[0] - 0.3 * x[1] * x[1] + 0.2 * x[2] + 0.4 * x[3]
}

/// Variables S, A, US, M, E, H; cached because fitting the mechanisms is
/// not free.
pub fn adult() -> &'static ScmSpec {
    static CELL: OnceLock<ScmSpec> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = rng::stream(REFERENCE_SEED, &[1]);
        let bern = Bernoulli::new(0.9).unwrap();
        let sau: Vec<Vec<f64>> = (0..REFERENCE_SAMPLES)
            .map(|_| {
                let s = bern.sample(&mut rng) as u8 as f64;
                let a: f64 = StandardNormal.sample(&mut rng);
                let us = bern.sample(&mut rng) as u8 as f64;
                vec![s, a, us]
            })
            .collect();
        let f_m = fit_reference(&sau, adult_m, 11);
        let saum: Vec<Vec<f64>> = sau
            .iter()
            .map(|x| {
                let mut v = x.clone();
                v.push(if sigmoid(f_m.predict(x)) > 0.5 { 1.0 } else { 0.0 });
                v
            })
            .collect();
        let f_e = fit_reference(&saum, adult_e, 12);
        let f_h = fit_reference(&saum, adult_h, 13);
        let vars = vec![
            Variable::new("S").categorical(),
            Variable::new("A"),
            Variable::new("US").categorical(),
            Variable::new("M").categorical(),
            Variable::new("E").actionable(),
            Variable::new("H").actionable(),
        ];
        let inputs = |n: usize| (1..=n).map(Expr::p).collect::<Vec<_>>();
        let eqs = vec![
            frozen_draw(0, NoiseSpec::Bernoulli { p: 0.9 }),
            frozen_draw(1, NoiseSpec::gaussian(0.0, 1.0)),
            frozen_draw(2, NoiseSpec::Bernoulli { p: 0.9 }),
            Eq::new(
                3,
                vec![now(0), now(1), now(2)],
                Expr::step(net(&f_m, vec![Expr::p(0), Expr::p(1), Expr::p(2)])),
                NoiseSpec::PointMass { value: 0.0 },
            )
            .frozen(),
            Eq::new(
                4,
                vec![lag1(4), now(0), now(1), now(2), now(3)],
                Expr::sum(vec![Expr::scaled(0.5, Expr::p(0)), net(&f_e, inputs(4)), Expr::Noise]),
                NoiseSpec::gaussian(0.0, 1.0),
            ),
            Eq::new(
                5,
                vec![lag1(5), now(0), now(1), now(2), now(3)],
                Expr::sum(vec![Expr::scaled(0.5, Expr::p(0)), net(&f_h, inputs(4)), Expr::Noise]),
                NoiseSpec::gaussian(0.0, 1.0),
            ),
        ];
        let label = LabelSpec {
            weights: vec![0.5, 0.3, 0.3, 0.6, 1.0, 0.8],
            interactions: vec![],
            intercept: 0.0,
            scale: 1.0,
            normalizer: Normalizer::Fixed(1.0),
        };
        let scm = ScmSpec::new(vars, eqs, Some(label), 1, 10).expect("adult spec is valid");
        let b = centring_intercept(&scm, REFERENCE_SEED);
        scm.rebuild(|_, _, l| l.as_mut().unwrap().intercept = b).expect("adult spec is valid")
    })
}

// Reference mechanisms for COMPAS; inputs (S, A[, C]).
fn compas_c(x: &[f64]) -> f64 {
    0.5 - 0.6 * x[0] + 0.2 * x[1]
}
fn compas_p(x: &[f64]) -> f64 {
    1.0 + 0.8 * x[0] - 0.3 * x[1] + 0.5 * x[2]
}

/// Variables S, A, C, P.
pub fn compas() -> &'static ScmSpec {
    static CELL: OnceLock<ScmSpec> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = rng::stream(REFERENCE_SEED, &[2]);
        let bern = Bernoulli::new(0.8).unwrap();
        let pois = rand_distr::Poisson::new(1.0).unwrap();
        let sa: Vec<Vec<f64>> = (0..REFERENCE_SAMPLES)
            .map(|_| vec![bern.sample(&mut rng) as u8 as f64, pois.sample(&mut rng)])
            .collect();
        let f_c = fit_reference(&sa, compas_c, 21);
        let sac: Vec<Vec<f64>> = sa
            .iter()
            .map(|x| {
                let u: f64 = rng.sample(StandardNormal);
                vec![x[0], x[1], sigmoid(f_c.predict(x)) + u]
            })
            .collect();
        let f_p = fit_reference(&sac, compas_p, 22);
        let vars = vec![
            Variable::new("S").categorical(),
            Variable::new("A"),
            Variable::new("C"),
            Variable::new("P").actionable(),
        ];
        let eqs = vec![
            frozen_draw(0, NoiseSpec::Bernoulli { p: 0.8 }),
            frozen_draw(1, NoiseSpec::Poisson { rate: 1.0 }),
            Eq::new(
                2,
                vec![now(0), now(1)],
                Expr::sum(vec![Expr::sigmoid(net(&f_c, vec![Expr::p(0), Expr::p(1)])), Expr::Noise]),
                NoiseSpec::gaussian(0.0, 1.0),
            )
            .frozen(),
            Eq::new(
                3,
                vec![lag1(3), now(0), now(1), now(2)],
                Expr::sum(vec![
                    Expr::scaled(0.5, Expr::p(0)),
                    net(&f_p, vec![Expr::p(1), Expr::p(2), Expr::p(3)]),
                    Expr::Noise,
                ]),
                NoiseSpec::gaussian(0.0, 1.0),
            ),
        ];
        let label = LabelSpec {
            weights: vec![-0.4, 0.3, -0.3, -0.8],
            interactions: vec![],
            intercept: 0.0,
            scale: 1.0,
            normalizer: Normalizer::Fixed(1.0),
        };
        let scm = ScmSpec::new(vars, eqs, Some(label), 1, 10).expect("compas spec is valid");
        let b = centring_intercept(&scm, REFERENCE_SEED);
        scm.rebuild(|_, _, l| l.as_mut().unwrap().intercept = b).expect("compas spec is valid")
    })
}

/// Variables G, A, E, L, D, I, S.
fn loan() -> ScmSpec {
    let vars = vec![
        Variable::new("G").categorical(),
        Variable::new("A"),
        Variable::new("E"),
        Variable::new("L"),
        Variable::new("D"),
        Variable::new("I").actionable(),
        Variable::new("S").actionable(),
    ];
    let half_own = || Expr::scaled(0.5, Expr::p(0));
    let eqs = vec![
        frozen_draw(0, NoiseSpec::Bernoulli { p: 0.5 }),
        Eq::new(1, vec![lag1(1)], Expr::linear(-35.0, &[0.5]), NoiseSpec::Gamma { shape: 10.0, scale: 3.5 }),
        // Parents: E', G, A. The noise sits inside the outer sigmoid.
        Eq::new(
            2,
            vec![lag1(2), now(0), now(1)],
            Expr::sum(vec![
                half_own(),
                Expr::c(-0.5),
                Expr::sigmoid(Expr::sum(vec![
                    Expr::c(-1.0),
                    Expr::scaled(0.5, Expr::p(1)),
                    Expr::sigmoid(Expr::scaled(0.1, Expr::p(2))),
                    Expr::Noise,
                ])),
            ]),
            NoiseSpec::gaussian(0.0, 0.5),
        ),
        // Parents: L', A, G.
        Eq::new(
            3,
            vec![lag1(3), now(1), now(0)],
            Expr::sum(vec![
                half_own(),
                Expr::c(1.0),
                Expr::product(vec![
                    Expr::c(0.01),
                    Expr::sum(vec![Expr::p(1), Expr::c(-5.0)]),
                    Expr::sum(vec![Expr::c(5.0), Expr::scaled(-1.0, Expr::p(1))]),
                ]),
                Expr::p(2),
                Expr::Noise,
            ]),
            NoiseSpec::gaussian(0.0, 2.0),
        ),
        // Parents: D', A, G, L.
        Eq::new(
            4,
            vec![lag1(4), now(1), now(0), now(3)],
            Expr::linear(-1.0, &[0.5, 0.1, 2.0, 1.0]),
            NoiseSpec::gaussian(0.0, 3.0),
        ),
        // Parents: I', A, G, E.
        Eq::new(
            5,
            vec![lag1(5), now(1), now(0), now(2)],
            Expr::sum(vec![
                half_own(),
                Expr::c(-4.0),
                Expr::scaled(0.1, Expr::sum(vec![Expr::p(1), Expr::c(35.0)])),
                Expr::scaled(2.0, Expr::p(2)),
                Expr::product(vec![Expr::p(2), Expr::p(3)]),
                Expr::Noise,
            ]),
            NoiseSpec::gaussian(0.0, 2.0),
        ),
        // Parents: S', I.
        Eq::new(
            6,
            vec![lag1(6), now(5)],
            Expr::sum(vec![half_own(), Expr::c(-4.0), Expr::scaled(1.5, Expr::relu(Expr::p(1))), Expr::Noise]),
            NoiseSpec::gaussian(0.0, 5.0),
        ),
    ];
    let label = LabelSpec {
        weights: vec![0.0, 0.0, 0.0, -1.0, -1.0, 1.0, 1.0],
        interactions: vec![Interaction { a: 5, b: 6, weight: 1.0 }],
        intercept: 0.0,
        scale: 0.3,
        normalizer: Normalizer::Fixed(1.0),
    };
    ScmSpec::new(vars, eqs, Some(label), 1, 10).expect("loan spec is valid")
}

/// One-dimensional process `X^t = a X^{t-1} - c t + U`, `U ~ N(mean, sd)`;
/// `mean` and `sd` combine the state and trend noise.
pub fn ar1_trend(a: f64, c: f64, mean: f64, sd: f64) -> Result<ScmSpec> {
    let eq = Eq::new(
        0,
        vec![lag1(0)],
        Expr::sum(vec![Expr::scaled(a, Expr::p(0)), Expr::scaled(-c, Expr::Time), Expr::Noise]),
        NoiseSpec::gaussian(mean, sd),
    );
    ScmSpec::new(vec![Variable::new("X").actionable()], vec![eq], None, 1, 0)
}

/// Label draws for `states` under the benchmark's label function.
pub fn label_sampler(id: BenchmarkId, states: &[Vec<f64>], seed: u64) -> Result<Vec<u8>> {
    let scm = build(id)?;
    let label = scm.label().expect("every benchmark has a label");
    sample_labels(label, states, seed)
}

/// Bernoulli labels; an empirical-mean normalizer is measured on `states`.
pub fn sample_labels(label: &LabelSpec, states: &[Vec<f64>], seed: u64) -> Result<Vec<u8>> {
    let d = label.weights.len();
    if let Some(bad) = states.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let rho = match label.normalizer {
        Normalizer::Fixed(v) => v,
        Normalizer::EmpiricalMean => {
            let m = states.iter().map(|x| label.score(x)).sum::<f64>() / states.len().max(1) as f64;
            // A zero mean leaves the scale undefined; fall back to 1.
            if m.abs() > 0.0 { m.abs() } else { 1.0 }
        }
    };
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::DegenerateData(format!("label normalizer {rho} is not positive")));
    }
    Ok(states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let p = label.probability(x, rho);
            let u: f64 = rng::stream(seed, &[purpose::LABEL, k as u64]).random();
            u8::from(u < p)
        })
        .collect())
}
