use serde::{Deserialize, Serialize};

/// Deterministic trend added (or subtracted) in a structural equation.
///
/// The default shape is `alpha * (beta_linear * min(0.05 t, 10) + beta_seasonal * |sin(0.5 t)|)`.
/// A `custom` step overrides it entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSpec {
    pub alpha: f64,
    pub beta_linear: f64,
    pub beta_seasonal: f64,
    /// +1 adds the trend to the equation, -1 subtracts it.
    pub sign: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomTrend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CustomTrend {
    /// `value` for t >= start, 0 before.
    Step { start: u64, value: f64 },
}

impl TrendSpec {
    pub fn new(alpha: f64, beta_linear: f64, beta_seasonal: f64, sign: f64) -> Self {
        Self { alpha, beta_linear, beta_seasonal, sign, custom: None }
    }

    pub fn none() -> Self {
        Self::new(0.0, 0.0, 0.0, 1.0)
    }

    pub fn step(start: u64, value: f64) -> Self {
        Self { custom: Some(CustomTrend::Step { start, value }), ..Self::none() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.custom.is_none() && !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("trend alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.beta_linear >= 0.0 && self.beta_seasonal >= 0.0) {
            return Err("trend betas must be >= 0".into());
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err("trend sign must be +1 or -1".into());
        }
        Ok(())
    }

    /// Unsigned trend value m(t).
    pub fn evaluate(&self, t: u64) -> f64 {
        if let Some(CustomTrend::Step { start, value }) = self.custom {
            return if t >= start { value } else { 0.0 };
        }
        if self.alpha == 0.0 {
            return 0.0;
        }
        let t = t as f64;
        self.alpha
            * (self.beta_linear * (0.05 * t).min(10.0) + self.beta_seasonal * (0.5 * t).sin().abs())
    }

    /// Contribution to the structural equation, `sign * m(t)`.
    pub fn contribution(&self, t: u64) -> f64 {
        self.sign * self.evaluate(t)
    }
}

/// Free function form used by the CLI and tests.
pub fn evaluate_trend(spec: &TrendSpec, t: u64) -> f64 {
    spec.evaluate(t)
}
