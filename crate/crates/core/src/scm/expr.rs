//! Closed-form structural expressions over an equation's parent list, the
//! timestep and the exogenous term.

use serde::{Deserialize, Serialize};

use crate::predictors::Regressor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    /// Index into the owning equation's parent list.
    Parent(usize),
    Time,
    Noise,
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Scale(f64, Box<Expr>),
    Sigmoid(Box<Expr>),
    Relu(Box<Expr>),
    /// 1 if the argument is > 0, else 0. Zero derivative.
    Step(Box<Expr>),
    /// Small fitted network applied to the listed inputs.
    Net(Box<Regressor>, Vec<Expr>),
}

/// Which input carries the unit tangent in forward-mode evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seed {
    None,
    Parent(usize),
    Noise,
}

pub struct Inputs<'a> {
    pub parents: &'a [f64],
    pub t: f64,
    pub noise: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Expr {
    pub fn c(v: f64) -> Self {
        Self::Const(v)
    }
    pub fn p(i: usize) -> Self {
        Self::Parent(i)
    }
    pub fn scaled(k: f64, e: Expr) -> Self {
        Self::Scale(k, Box::new(e))
    }
    pub fn sum(terms: Vec<Expr>) -> Self {
        Self::Add(terms)
    }
    pub fn product(terms: Vec<Expr>) -> Self {
        Self::Mul(terms)
    }
    pub fn sigmoid(e: Expr) -> Self {
        Self::Sigmoid(Box::new(e))
    }
    pub fn relu(e: Expr) -> Self {
        Self::Relu(Box::new(e))
    }
    pub fn step(e: Expr) -> Self {
        Self::Step(Box::new(e))
    }

    /// `intercept + sum_j w_j * parent_j + noise`.
    pub fn linear(intercept: f64, weights: &[f64]) -> Self {
        let mut terms = vec![Self::Const(intercept)];
        terms.extend(weights.iter().enumerate().map(|(j, &w)| Self::scaled(w, Self::Parent(j))));
        terms.push(Self::Noise);
        Self::Add(terms)
    }

    pub fn eval(&self, x: &Inputs) -> f64 {
        self.eval_dual(x, Seed::None).0
    }

    /// Value and derivative with respect to the seeded input.
    pub fn eval_dual(&self, x: &Inputs, seed: Seed) -> (f64, f64) {
        match self {
            Self::Const(v) => (*v, 0.0),
            Self::Parent(j) => (x.parents[*j], if seed == Seed::Parent(*j) { 1.0 } else { 0.0 }),
            Self::Time => (x.t, 0.0),
            Self::Noise => (x.noise, if seed == Seed::Noise { 1.0 } else { 0.0 }),
            Self::Add(terms) => terms.iter().fold((0.0, 0.0), |(v, d), e| {
                let (a, b) = e.eval_dual(x, seed);
                (v + a, d + b)
            }),
            Self::Mul(terms) => terms.iter().fold((1.0, 0.0), |(v, d), e| {
                let (a, b) = e.eval_dual(x, seed);
                (v * a, d * a + v * b)
            }),
            Self::Scale(k, e) => {
                let (a, b) = e.eval_dual(x, seed);
                (k * a, k * b)
            }
            Self::Sigmoid(e) => {
                let (a, b) = e.eval_dual(x, seed);
                let s = sigmoid(a);
                (s, s * (1.0 - s) * b)
            }
            Self::Relu(e) => {
                let (a, b) = e.eval_dual(x, seed);
                if a > 0.0 {
                    (a, b)
                } else {
                    (0.0, 0.0)
                }
            }
            Self::Step(e) => {
                let (a, _) = e.eval_dual(x, seed);
                (if a > 0.0 { 1.0 } else { 0.0 }, 0.0)
            }
            Self::Net(net, inputs) => {
                let mut vals = Vec::with_capacity(inputs.len());
                let mut tangents = Vec::with_capacity(inputs.len());
                for e in inputs {
                    let (a, b) = e.eval_dual(x, seed);
                    vals.push(a);
                    tangents.push(b);
                }
                if tangents.iter().all(|&b| b == 0.0) {
                    (net.predict(&vals), 0.0)
                } else {
                    let (v, g) = net.value_and_gradient(&vals);
                    (v, g.iter().zip(&tangents).map(|(a, b)| a * b).sum())
                }
            }
        }
    }

    pub fn noise_count(&self) -> usize {
        match self {
            Self::Noise => 1,
            Self::Const(_) | Self::Parent(_) | Self::Time => 0,
            Self::Add(t) | Self::Mul(t) => t.iter().map(Self::noise_count).sum(),
            Self::Scale(_, e) | Self::Sigmoid(e) | Self::Relu(e) | Self::Step(e) => e.noise_count(),
            Self::Net(_, inputs) => inputs.iter().map(Self::noise_count).sum(),
        }
    }

    /// True when the noise enters as a direct summand of a top-level sum.
    pub fn noise_is_additive(&self) -> bool {
        match self {
            Self::Noise => true,
            Self::Add(terms) => {
                self.noise_count() == 1 && terms.iter().any(|e| matches!(e, Self::Noise))
            }
            _ => false,
        }
    }

    pub fn max_parent_index(&self) -> Option<usize> {
        match self {
            Self::Parent(j) => Some(*j),
            Self::Const(_) | Self::Time | Self::Noise => None,
            Self::Add(t) | Self::Mul(t) => t.iter().filter_map(Self::max_parent_index).max(),
            Self::Scale(_, e) | Self::Sigmoid(e) | Self::Relu(e) | Self::Step(e) => e.max_parent_index(),
            Self::Net(_, inputs) => inputs.iter().filter_map(Self::max_parent_index).max(),
        }
    }

    pub fn uses_parent(&self, j: usize) -> bool {
        match self {
            Self::Parent(i) => *i == j,
            Self::Const(_) | Self::Time | Self::Noise => false,
            Self::Add(t) | Self::Mul(t) => t.iter().any(|e| e.uses_parent(j)),
            Self::Scale(_, e) | Self::Sigmoid(e) | Self::Relu(e) | Self::Step(e) => e.uses_parent(j),
            Self::Net(_, inputs) => inputs.iter().any(|e| e.uses_parent(j)),
        }
    }
}
