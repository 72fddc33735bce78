use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// Distribution of one exogenous term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { mean: f64, stddev: f64 },
    Mixture { components: Vec<Component> },
    Bernoulli { p: f64 },
    Poisson { rate: f64 },
    /// Shape/scale parametrisation: mean = shape * scale.
    Gamma { shape: f64, scale: f64 },
    PointMass { value: f64 },
}

impl NoiseSpec {
    pub fn gaussian(mean: f64, stddev: f64) -> Self {
        Self::Gaussian { mean, stddev }
    }

    pub fn zero() -> Self {
        Self::PointMass { value: 0.0 }
    }

    /// Equal-weight mixture of Gaussians given as (mean, stddev) pairs.
    pub fn equal_mixture(parts: &[(f64, f64)]) -> Self {
        let w = 1.0 / parts.len() as f64;
        Self::Mixture {
            components: parts
                .iter()
                .map(|&(mean, stddev)| Component { weight: w, mean, stddev })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(format!("noise: {m}")));
        match self {
            Self::Gaussian { mean, stddev } => {
                if !mean.is_finite() || !(*stddev >= 0.0) || !stddev.is_finite() {
                    return bad("gaussian needs finite mean and stddev >= 0");
                }
            }
            Self::Mixture { components } => {
                if components.is_empty() {
                    return bad("empty mixture");
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components.iter().any(|c| !(c.weight > 0.0) || !(c.stddev >= 0.0))
                    || (total - 1.0).abs() > 1e-9
                {
                    return bad("mixture weights must be positive and sum to 1, stddev >= 0");
                }
            }
            Self::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return bad("bernoulli p outside [0, 1]");
                }
            }
            Self::Poisson { rate } => {
                if !(*rate > 0.0) || !rate.is_finite() {
                    return bad("poisson rate must be > 0");
                }
            }
            Self::Gamma { shape, scale } => {
                if !(*shape > 0.0) || !(*scale > 0.0) {
                    return bad("gamma shape and scale must be > 0");
                }
            }
            Self::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass must be finite");
                }
            }
        }
        Ok(())
    }

    /// Assumes `validate` passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mean, stddev } => {
                if stddev == 0.0 {
                    mean
                } else {
                    mean + stddev * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }
            }
            Self::Mixture { ref components } => {
                let mut pick: f64 = rng.random();
                let last = components.len() - 1;
                let mut chosen = &components[last];
                for c in &components[..last] {
                    if pick < c.weight {
                        chosen = c;
                        break;
                    }
                    pick -= c.weight;
                }
                chosen.mean + chosen.stddev * rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
            Self::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Poisson { rate } => Poisson::new(rate).expect("validated").sample(rng),
            Self::Gamma { shape, scale } => Gamma::new(shape, scale).expect("validated").sample(rng),
            Self::PointMass { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gaussian { mean, .. } => mean,
            Self::Mixture { ref components } => components.iter().map(|c| c.weight * c.mean).sum(),
            Self::Bernoulli { p } => p,
            Self::Poisson { rate } => rate,
            Self::Gamma { shape, scale } => shape * scale,
            Self::PointMass { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { stddev, .. } => stddev * stddev,
            Self::Mixture { ref components } => {
                let m = self.mean();
                components
                    .iter()
                    .map(|c| c.weight * (c.stddev * c.stddev + (c.mean - m).powi(2)))
                    .sum()
            }
            Self::Bernoulli { p } => p * (1.0 - p),
            Self::Poisson { rate } => rate,
            Self::Gamma { shape, scale } => shape * scale * scale,
            Self::PointMass { .. } => 0.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.variance() == 0.0
    }
}
