//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trecourse::analysis::EvalMode;
use trecourse::benchmarks::{BenchmarkId, BenchmarkKind, TrendKind};
use trecourse::predictors::TrainConfig;
use trecourse::recourse::{Method, RecourseConfig, SetPolicy};

/// Overrides the configured output directory.
pub const OUTPUT_ENV: &str = "TRECOURSE_OUTPUT";
/// Worker threads; unset or 0 means one per core.
pub const THREADS_ENV: &str = "TRECOURSE_THREADS";

/// Which process the solvers reason with. Evaluation always uses the
/// true process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Solvers get the true process; no estimator is written.
    TrueScm,
    /// Solvers get a process fitted on the training split up to the issue
    /// time.
    Fitted,
    /// Solvers get the true process, stored as the estimator so the bundle
    /// has the same shape as a fitted run.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub individuals: usize,
    /// Last simulated timestep.
    pub horizon: usize,
    pub train_fraction: f64,
    /// Negatively classified test individuals that seek recourse.
    pub seekers: usize,
    /// Timestep at which recourse is issued.
    pub issue_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Classifier {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recourse {
    pub methods: Vec<Method>,
    /// Robustness radii for the methods that use one; T-SAR runs once.
    pub epsilons: Vec<f64>,
    /// Lead time of the T-SAR forecast.
    pub t_sar_tau: usize,
    pub lambda: f64,
    pub eta: f64,
    pub epochs: usize,
    pub inner_iters: usize,
    pub uncertainty_samples: usize,
    pub inner_samples: usize,
    /// Largest intervention set tried; 0 means all actionable variables.
    pub max_set_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluation {
    /// Lags after the issue time at which validity is measured.
    pub lags: Vec<usize>,
    pub rollouts: usize,
    pub mode: EvalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub output: PathBuf,
    pub estimator: EstimatorMode,
    pub benchmark: BenchmarkId,
    pub population: Population,
    pub classifier: Classifier,
    pub recourse: Recourse,
    pub evaluation: Evaluation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let solver = RecourseConfig::default();
        Self {
            seed: 0,
            repetitions: 5,
            output: PathBuf::from("results"),
            estimator: EstimatorMode::TrueScm,
            benchmark: BenchmarkId::new(BenchmarkKind::LinearAnm, TrendKind::LinearSeasonal, 0.5),
            population: Population { individuals: 2000, horizon: 100, train_fraction: 0.8, seekers: 100, issue_time: 0 },
            classifier: Classifier {
                hidden: train.hidden,
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
            },
            recourse: Recourse {
                methods: Method::ALL.to_vec(),
                epsilons: vec![3.0, 5.0],
                t_sar_tau: 10,
                lambda: solver.lambda,
                eta: solver.eta,
                epochs: solver.epochs,
                inner_iters: solver.inner_iters,
                uncertainty_samples: solver.n_uncertainty_samples,
                inner_samples: solver.n_inner,
                max_set_size: 0,
            },
            evaluation: Evaluation { lags: vec![0, 10, 20, 50, 100], rollouts: 100, mode: EvalMode::Conditional },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Canonical TOML text; parsing it gives back `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all representable in TOML")
    }

    /// Hex SHA-256 of the canonical form with the output directory left
    /// out, so relocating a run does not change its identity.
    pub fn hash(&self) -> String {
        let anchored = Self { output: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(anchored.to_toml().as_bytes()))
    }

    pub fn train_size(&self) -> usize {
        (self.population.individuals as f64 * self.population.train_fraction).floor() as usize
    }

    pub fn test_size(&self) -> usize {
        self.population.individuals - self.train_size()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1)");
        }
        if self.train_size() < 2 || self.test_size() == 0 {
            bail!("population of {} is too small to split", p.individuals);
        }
        if p.seekers == 0 || p.seekers > self.test_size() {
            bail!("seekers ({}) must be between 1 and the test split size ({})", p.seekers, self.test_size());
        }
        if p.issue_time > p.horizon {
            bail!("issue_time {} is past the horizon {}", p.issue_time, p.horizon);
        }
        if self.estimator == EstimatorMode::Fitted && p.issue_time < 2 {
            bail!("a fitted estimator needs issue_time >= 2");
        }
        let r = &self.recourse;
        if r.methods.is_empty() {
            bail!("no recourse methods given");
        }
        if r.methods.iter().any(|&m| m != Method::TSar) && r.epsilons.is_empty() {
            bail!("no epsilons given");
        }
        if self.evaluation.lags.is_empty() {
            bail!("no evaluation lags given");
        }
        // Surface solver and trainer range errors before any work starts.
        for (method, epsilon) in self.solver_grid() {
            self.solver(method, epsilon).validate()?;
        }
        self.train_config(0).validate()?;
        trecourse::benchmarks::build(self.benchmark)?;
        Ok(())
    }

    /// Method and epsilon pairs in output order.
    pub fn solver_grid(&self) -> Vec<(Method, f64)> {
        let mut grid = Vec::new();
        for &m in &self.recourse.methods {
            if m == Method::TSar {
                grid.push((m, 0.0));
            } else {
                grid.extend(self.recourse.epsilons.iter().map(|&e| (m, e)));
            }
        }
        grid
    }

    pub fn solver(&self, method: Method, epsilon: f64) -> RecourseConfig {
        let r = &self.recourse;
        RecourseConfig {
            method,
            epsilon,
            tau: if method == Method::TSar { r.t_sar_tau } else { 0 },
            lambda: r.lambda,
            eta: r.eta,
            epochs: r.epochs,
            inner_iters: r.inner_iters,
            n_uncertainty_samples: r.uncertainty_samples,
            n_inner: r.inner_samples,
            policy: SetPolicy::Enumerate(if r.max_set_size == 0 { usize::MAX } else { r.max_set_size }),
            ..RecourseConfig::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let c = &self.classifier;
        TrainConfig { batch_size: c.batch_size, epochs: c.epochs, learning_rate: c.learning_rate, seed, hidden: c.hidden.clone() }
    }
}

/// Output directory after the environment override.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output.clone(),
    }
}

/// Thread count from the environment; 0 lets the pool decide.
pub fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a count")),
        _ => Ok(0),
    }
}
