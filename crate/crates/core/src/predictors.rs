//! Classifiers `h: x -> [0, 1]` and small regression networks, with exact
//! input gradients.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub trait Classifier: Send + Sync {
    fn dim(&self) -> usize;
    /// Probability of the favourable class; `x.len()` must equal `dim()`.
    fn predict_raw(&self, x: &[f64]) -> f64;
    /// Value and gradient of [`Classifier::predict_raw`].
    fn gradient_raw(&self, x: &[f64]) -> (f64, Vec<f64>);

    fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.predict_raw(x))
    }
    fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.gradient_raw(x).1)
    }
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Logistic,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Logistic => sigmoid(z),
            Self::Tanh => z.tanh(),
        }
    }
    /// Derivative expressed through the activation value.
    fn slope(self, a: f64) -> f64 {
        match self {
            Self::Logistic => a * (1.0 - a),
            Self::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer; `w` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    /// Uniform in `+-1/sqrt(n_in)` for weights and biases.
    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = 1.0 / (n_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-a..a)).collect::<Vec<_>>();
        let w = draw(n_in * n_out);
        let b = draw(n_out);
        Self { n_in, n_out, w, b }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().enumerate().map(|(o, b)| {
            b + self.w[o * self.n_in..(o + 1) * self.n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    /// `w^T delta`.
    fn backward(&self, delta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_in];
        for (o, &dl) in delta.iter().enumerate() {
            if dl != 0.0 {
                for (gi, w) in g.iter_mut().zip(&self.w[o * self.n_in..(o + 1) * self.n_in]) {
                    *gi += w * dl;
                }
            }
        }
        g
    }
}

/// Feed-forward network with standardized inputs and a scalar linear
/// output `z`. Hidden layers share one activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

impl Network {
    fn init(mean: Vec<f64>, scale: Vec<f64>, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[purpose::INIT]);
        let mut sizes = vec![mean.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], &mut rng)).collect();
        Self { input_mean: mean, input_scale: scale, activation, layers }
    }

    pub fn dim(&self) -> usize {
        self.input_mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Activations per layer: entry 0 is the standardized input, the last
    /// is the single output `z`.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.standardize(x));
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&acts[l], &mut z);
            if l < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.activations(x).last().unwrap()[0]
    }

    /// Backpropagates `dz` from the output; returns the gradient with respect
    /// to the standardized input and optionally accumulates parameter
    /// gradients into `grads` (same layout as `layers`).
    fn backprop(&self, acts: &[Vec<f64>], dz: f64, mut grads: Option<&mut [Dense]>) -> Vec<f64> {
        let mut delta = vec![dz];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if let Some(g) = grads.as_deref_mut() {
                let g = &mut g[l];
                for (o, &dl) in delta.iter().enumerate() {
                    g.b[o] += dl;
                    for (gw, a) in g.w[o * layer.n_in..(o + 1) * layer.n_in].iter_mut().zip(&acts[l]) {
                        *gw += dl * a;
                    }
                }
            }
            let mut back = layer.backward(&delta);
            if l > 0 {
                for (b, &a) in back.iter_mut().zip(&acts[l]) {
                    *b *= self.activation.slope(a);
                }
            }
            delta = back;
        }
        delta
    }

    /// Output and its gradient with respect to the raw input.
    pub fn output_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let acts = self.activations(x);
        let z = acts.last().unwrap()[0];
        let mut g = self.backprop(&acts, 1.0, None);
        g.iter_mut().zip(&self.input_scale).for_each(|(v, s)| *v /= s);
        (z, g)
    }

    fn zero_like(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense { n_in: l.n_in, n_out: l.n_out, w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] })
            .collect()
    }
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, n: usize) -> Self {
        Self { lr, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn step(&mut self, net: &mut Network, grads: &[Dense]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let params = net.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()));
        let gs = grads.iter().flat_map(|l| l.w.iter().chain(l.b.iter()));
        for (((p, g), m), v) in params.zip(gs).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 100, epochs: 15, learning_rate: 1e-3, seed: 0, hidden: vec![50, 50] }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("batch size, epochs and learning rate must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

fn moments(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let scale = (0..d)
        .map(|j| {
            let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 { var.sqrt() } else { 1.0 }
        })
        .collect();
    (mean, scale)
}

fn check_rows(xs: &[Vec<f64>], n_targets: usize) -> Result<usize> {
    let d = xs.first().map(Vec::len).ok_or_else(|| Error::DegenerateData("no examples".into()))?;
    if xs.len() != n_targets {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: n_targets });
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite feature".into()));
    }
    Ok(d)
}

/// Minibatch Adam on the mean of `loss_grad(z, target)` over each batch.
fn train(net: &mut Network, xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig, loss_grad: impl Fn(f64, f64) -> f64) {
    let n_params: usize = net.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
    let mut adam = Adam::new(cfg.learning_rate, n_params);
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng::stream(cfg.seed, &[purpose::SHUFFLE, epoch as u64]));
        for batch in idx.chunks(cfg.batch_size) {
            let mut grads = net.zero_like();
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let acts = net.activations(&xs[i]);
                let z = acts.last().unwrap()[0];
                net.backprop(&acts, inv * loss_grad(z, ys[i]), Some(&mut grads));
            }
            adam.step(net, &grads);
        }
    }
}

/// Binary classifier: logistic output over a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub net: Network,
}

impl Mlp {
    /// Network with every weight and bias zero (predicts 1/2 everywhere).
    pub fn zeros(d: usize, hidden: &[usize]) -> Self {
        let mut net = Network::init(vec![0.0; d], vec![1.0; d], hidden, Activation::Logistic, 0);
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        Self { net }
    }

    pub fn random(d: usize, hidden: &[usize], seed: u64) -> Self {
        Self { net: Network::init(vec![0.0; d], vec![1.0; d], hidden, Activation::Logistic, seed) }
    }
}

impl Classifier for Mlp {
    fn dim(&self) -> usize {
        self.net.dim()
    }
    fn predict_raw(&self, x: &[f64]) -> f64 {
        sigmoid(self.net.output(x))
    }
    fn gradient_raw(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (z, mut g) = self.net.output_and_gradient(x);
        let p = sigmoid(z);
        g.iter_mut().for_each(|v| *v *= p * (1.0 - p));
        (p, g)
    }
}

/// Mean binary cross-entropy of `h` on the given data.
pub fn bce(h: &dyn Classifier, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
    let eps = 1e-12;
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let p = h.predict_raw(x).clamp(eps, 1.0 - eps);
            if y == 1 { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum::<f64>()
        / xs.len() as f64
}

pub fn accuracy(h: &dyn Classifier, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
    let hits = xs.iter().zip(ys).filter(|(x, &y)| (h.predict_raw(x) >= 0.5) == (y == 1)).count();
    hits as f64 / xs.len() as f64
}

pub fn train_mlp(xs: &[Vec<f64>], ys: &[u8], cfg: &TrainConfig) -> Result<Mlp> {
    cfg.validate()?;
    check_rows(xs, ys.len())?;
    if ys.iter().any(|&y| y > 1) {
        return Err(Error::DegenerateData("labels must be 0 or 1".into()));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::DegenerateData("training labels contain a single class".into()));
    }
    let (mean, scale) = moments(xs);
    let mut net = Network::init(mean, scale, &cfg.hidden, Activation::Logistic, cfg.seed);
    let targets: Vec<f64> = ys.iter().map(|&y| y as f64).collect();
    train(&mut net, xs, &targets, cfg, |z, y| sigmoid(z) - y);
    Ok(Mlp { net })
}

/// Scalar regression network with standardized target; used for fitted
/// structural equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub net: Network,
    pub output_mean: f64,
    pub output_scale: f64,
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.output_mean + self.output_scale * self.net.output(x)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (z, mut g) = self.net.output_and_gradient(x);
        g.iter_mut().for_each(|v| *v *= self.output_scale);
        (self.output_mean + self.output_scale * z, g)
    }
}

/// Fits a tanh network to `ys` by minibatch Adam on squared error.
pub fn fit_regressor(xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<Regressor> {
    cfg.validate()?;
    check_rows(xs, ys.len())?;
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
    let (im, is) = moments(xs);
    let mut net = Network::init(im, is, &cfg.hidden, Activation::Tanh, cfg.seed);
    let targets: Vec<f64> = ys.iter().map(|y| (y - mean) / scale).collect();
    train(&mut net, xs, &targets, cfg, |z, y| 2.0 * (z - y));
    Ok(Regressor { net, output_mean: mean, output_scale: scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
    Identity,
}

/// `h(x) = link(beta . x + bias)` with every `|beta_i| <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedLinear {
    pub beta: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
    pub bound: f64,
    pub link: Link,
}

impl BoundedLinear {
    pub fn new(beta: Vec<f64>, bias: f64, bound: f64, link: Link) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidArgument("bound must be positive".into()));
        }
        if let Some(b) = beta.iter().find(|b| b.abs() > bound || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("coefficient {b} outside [-{bound}, {bound}]")));
        }
        Ok(Self { beta, bias, bound, link })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

impl Classifier for BoundedLinear {
    fn dim(&self) -> usize {
        self.beta.len()
    }
    fn predict_raw(&self, x: &[f64]) -> f64 {
        match self.link {
            Link::Logistic => sigmoid(self.score(x)),
            Link::Identity => self.score(x),
        }
    }
    fn gradient_raw(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let p = self.predict_raw(x);
        let k = match self.link {
            Link::Logistic => p * (1.0 - p),
            Link::Identity => 1.0,
        };
        (p, self.beta.iter().map(|b| b * k).collect())
    }
}

/// Trace of a projected-gradient fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedFit {
    pub model: BoundedLinear,
    /// Objective `|X beta - y|^2 / (2n)` after each iteration.
    pub objective: Vec<f64>,
}

/// Box-constrained least squares without intercept, by projected gradient
/// descent with step `1/L`, `L` the largest eigenvalue of `X^T X / n`.
pub fn fit_bounded_linear(xs: &[Vec<f64>], ys: &[f64], bound: f64) -> Result<BoundedFit> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument("bound must be positive".into()));
    }
    let d = check_rows(xs, ys.len())?;
    let n = xs.len() as f64;
    let mut gram = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for (x, y) in xs.iter().zip(ys) {
        for i in 0..d {
            xty[i] += x[i] * y / n;
            for j in 0..d {
                gram[i * d + j] += x[i] * x[j] / n;
            }
        }
    }
    let yy = ys.iter().map(|y| y * y).sum::<f64>() / n;
    let objective = |b: &[f64]| {
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += b[i] * gram[i * d + j] * b[j];
            }
        }
        0.5 * (q - 2.0 * b.iter().zip(&xty).map(|(a, c)| a * c).sum::<f64>() + yy)
    };
    // The Gram trace bounds the largest eigenvalue from above.
    let lip = (0..d).map(|i| gram[i * d + i]).sum::<f64>();
    if lip <= 0.0 {
        let model = BoundedLinear::new(vec![0.0; d], 0.0, bound, Link::Identity)?;
        return Ok(BoundedFit { model, objective: vec![0.5 * yy] });
    }
    let mut beta = vec![0.0; d];
    let mut trace = vec![objective(&beta)];
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        let grad: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| gram[i * d + j] * beta[j]).sum::<f64>() - xty[i])
            .collect();
        for i in 0..d {
            let nb = (beta[i] - grad[i] / lip).clamp(-bound, bound);
            moved = moved.max((nb - beta[i]).abs());
            beta[i] = nb;
        }
        trace.push(objective(&beta));
        if moved <= 1e-14 * (1.0 + beta.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
            break;
        }
    }
    Ok(BoundedFit { model: BoundedLinear::new(beta, 0.0, bound, Link::Identity)?, objective: trace })
}

/// Serializable classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Mlp(Mlp),
    BoundedLinear(BoundedLinear),
}

impl Classifier for Model {
    fn dim(&self) -> usize {
        match self {
            Self::Mlp(m) => m.dim(),
            Self::BoundedLinear(m) => m.dim(),
        }
    }
    fn predict_raw(&self, x: &[f64]) -> f64 {
        match self {
            Self::Mlp(m) => m.predict_raw(x),
            Self::BoundedLinear(m) => m.predict_raw(x),
        }
    }
    fn gradient_raw(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Self::Mlp(m) => m.gradient_raw(x),
            Self::BoundedLinear(m) => m.gradient_raw(x),
        }
    }
}
