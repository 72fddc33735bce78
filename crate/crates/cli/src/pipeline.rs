//! The experiment pipeline. Each repetition draws every seed from one
//! master seed, so stages can run separately or together with the same
//! bytes on disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use trecourse::analysis::{trend_validity_bound, linear_validity_bound, validity_over_time, BoundReport, EvalConfig};
use trecourse::benchmarks::{build, label_sampler, BenchmarkId, TrendKind};
use trecourse::estimator::{fit, FitConfig};
use trecourse::persist::{
    estimator_from_json, estimator_to_json, model_from_json, model_to_json, scm_from_json, scm_to_json, EstimatorBody,
    Provenance,
};
use trecourse::predictors::{accuracy, fit_bounded_linear, train_mlp, Classifier, Model};
use trecourse::recourse::{solve, RecourseOutcome};
use trecourse::rng;
use trecourse::scm::{ScmSpec, Trajectory};
use trecourse::trend::TrendSpec;

use crate::bundle::{self, BoundRow, Failure, Manifest, RepSeeds, RepSummary, Stage, StageError};
use crate::config::{EstimatorMode, ExperimentConfig};

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig, root: PathBuf) -> Self {
        Self { cfg, root }
    }

    pub fn master_seed(&self, rep: usize) -> u64 {
        rng::derive(self.cfg.seed, &[rep as u64])
    }

    pub fn stage_seed(&self, rep: usize, stage: Stage) -> u64 {
        rng::derive(self.master_seed(rep), &[stage as u64 + 1])
    }

    pub fn seeds(&self, rep: usize) -> RepSeeds {
        let stages = Stage::PIPELINE.iter().map(|&s| (s.name().to_string(), self.stage_seed(rep, s))).collect();
        RepSeeds { index: rep, master: self.master_seed(rep), stages }
    }

    fn with_estimator(&self) -> bool {
        self.cfg.estimator != EstimatorMode::TrueScm
    }

    pub fn expected_files(&self) -> Vec<String> {
        let mut out = vec![bundle::CONFIG.to_string()];
        for rep in 0..self.cfg.repetitions {
            for stage in Stage::PIPELINE {
                for f in stage.outputs(self.with_estimator()) {
                    out.push(format!("rep-{rep:03}/{f}"));
                }
            }
        }
        out.sort();
        out
    }

    fn path(&self, rep: usize, file: &str) -> PathBuf {
        bundle::rep_dir(&self.root, rep).join(file)
    }

    /// Refuses to mix two experiments in one directory; writes the
    /// canonical config.
    pub fn prepare(&self) -> Result<()> {
        if self.root.join(bundle::MANIFEST).exists() {
            let m = Manifest::read(&self.root)?;
            if m.config_sha256 != self.cfg.hash() {
                bail!("{} holds results of a different config", self.root.display());
            }
        }
        bundle::write_text(&self.root.join(bundle::CONFIG), &self.cfg.to_toml())
    }

    pub fn write_manifest(&self, failure: Option<&StageError>) -> Result<Manifest> {
        let failure = failure.map(|e| Failure { stage: e.stage, rep: e.rep, message: e.message.clone() });
        let seeds = (0..self.cfg.repetitions).map(|r| self.seeds(r)).collect();
        let m = Manifest::scan(&self.root, self.cfg.hash(), seeds, &self.expected_files(), failure)?;
        m.write(&self.root)?;
        Ok(m)
    }

    /// Runs `stages` in order for each repetition in `reps`, repetitions in
    /// parallel, then writes the manifest. The reported failure is the one
    /// with the lowest repetition index.
    pub fn run_stages(&self, stages: &[Stage], reps: &[usize]) -> std::result::Result<Manifest, StageError> {
        self.prepare().map_err(|e| StageError::new(stages[0], None, e))?;
        let results: Vec<std::result::Result<(), StageError>> = reps
            .par_iter()
            .map(|&rep| {
                for &stage in stages {
                    self.run_stage(stage, rep).map_err(|e| StageError::new(stage, Some(rep), e))?;
                }
                Ok(())
            })
            .collect();
        let failure = results.into_iter().find_map(|r| r.err());
        let manifest = self.write_manifest(failure.as_ref()).map_err(|e| StageError::new(stages[stages.len() - 1], None, e))?;
        match failure {
            Some(e) => Err(e),
            None => Ok(manifest),
        }
    }

    pub fn run(&self) -> std::result::Result<Manifest, StageError> {
        let reps: Vec<usize> = (0..self.cfg.repetitions).collect();
        self.run_stages(&Stage::PIPELINE, &reps)
    }

    pub fn run_stage(&self, stage: Stage, rep: usize) -> Result<()> {
        match stage {
            Stage::Simulate => self.simulate(rep),
            Stage::Train => self.train(rep),
            Stage::FitScm => self.fit_scm(rep),
            Stage::Recourse => self.recourse(rep),
            Stage::Evaluate => self.evaluate(rep),
            Stage::Bounds => self.bounds(rep),
            Stage::Report => bail!("report runs on a whole bundle"),
        }
    }

    fn truth(&self, rep: usize) -> Result<ScmSpec> {
        Ok(scm_from_json(&bundle::read_text(&self.path(rep, bundle::TRUTH))?)?)
    }

    fn trajectories(&self, rep: usize, truth: &ScmSpec) -> Result<Vec<Trajectory>> {
        let seed = self.stage_seed(rep, Stage::Simulate);
        let trajs = bundle::read_trajectories(&self.path(rep, bundle::TRAJECTORIES), truth.dim(), seed)?;
        let p = &self.cfg.population;
        if trajs.len() != p.individuals || trajs.iter().any(|t| t.states().len() != p.horizon + 1) {
            bail!("{} does not match the configured population", bundle::TRAJECTORIES);
        }
        Ok(trajs)
    }

    fn classifier(&self, rep: usize) -> Result<Model> {
        Ok(model_from_json(&bundle::read_text(&self.path(rep, bundle::CLASSIFIER))?)?)
    }

    /// The process the solvers reason with.
    fn solver_model(&self, rep: usize, truth: ScmSpec) -> Result<ScmSpec> {
        let path = self.path(rep, bundle::ESTIMATOR);
        Ok(match self.cfg.estimator {
            EstimatorMode::TrueScm => truth,
            EstimatorMode::Fitted => estimator_from_json(&bundle::read_text(&path)?)?.estimator.spec,
            EstimatorMode::Perfect => scm_from_json(&bundle::read_text(&path)?)?,
        })
    }

    fn simulate(&self, rep: usize) -> Result<()> {
        let p = &self.cfg.population;
        let truth = build(self.cfg.benchmark)?;
        let seed = self.stage_seed(rep, Stage::Simulate);
        let mut trajs = truth.sample_trajectory(p.horizon, p.individuals, seed)?;
        // Labels are drawn at the origin, where the classifier is trained.
        let xs: Vec<Vec<f64>> = trajs.iter().map(|t| t.states()[0].clone()).collect();
        let ys = label_sampler(self.cfg.benchmark, &xs, rng::derive(seed, &[rng::purpose::LABEL]))?;
        for (tr, y) in trajs.iter_mut().zip(ys) {
            tr.labels[0] = Some(y);
        }
        bundle::write_text(&self.path(rep, bundle::TRUTH), &scm_to_json(&truth)?)?;
        bundle::write_trajectories(&self.path(rep, bundle::TRAJECTORIES), &truth.names(), &trajs)
    }

    fn labelled(trajs: &[Trajectory]) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        trajs
            .iter()
            .map(|t| {
                let y = t.labels[0].with_context(|| format!("individual {} has no label at t=0", t.individual))?;
                Ok((t.states()[0].clone(), y))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    fn train(&self, rep: usize) -> Result<()> {
        let truth = self.truth(rep)?;
        let trajs = self.trajectories(rep, &truth)?;
        let (train, test) = trajs.split_at(self.cfg.train_size());
        let (xs, ys) = Self::labelled(train)?;
        let (test_x, test_y) = Self::labelled(test)?;
        let h = train_mlp(&xs, &ys, &self.cfg.train_config(self.stage_seed(rep, Stage::Train)))?;
        let summary = RepSummary {
            train_accuracy: accuracy(&h, &xs, &ys),
            test_accuracy: accuracy(&h, &test_x, &test_y),
            positive_rate: ys.iter().chain(&test_y).map(|&y| y as f64).sum::<f64>() / trajs.len() as f64,
        };
        bundle::write_text(&self.path(rep, bundle::CLASSIFIER), &model_to_json(&Model::Mlp(h))?)?;
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        bundle::write_text(&self.path(rep, bundle::SUMMARY), &text)
    }

    fn fit_scm(&self, rep: usize) -> Result<()> {
        let truth = self.truth(rep)?;
        let path = self.path(rep, bundle::ESTIMATOR);
        match self.cfg.estimator {
            EstimatorMode::TrueScm => Ok(()),
            EstimatorMode::Perfect => bundle::write_text(&path, &scm_to_json(&truth)?),
            EstimatorMode::Fitted => {
                let trajs = self.trajectories(rep, &truth)?;
                let cutoff = self.cfg.population.issue_time;
                let estimator = fit(&trajs[..self.cfg.train_size()], &truth, &FitConfig { cutoff, use_time: true })?;
                let (data_hash, _) = bundle::sha256_file(&self.path(rep, bundle::TRAJECTORIES))?;
                let provenance = Provenance { cutoff, data_hash, seed: self.stage_seed(rep, Stage::FitScm) };
                bundle::write_text(&path, &estimator_to_json(&EstimatorBody { provenance, estimator })?)
            }
        }
    }

    /// Test individuals negatively classified at the issue time, in id order.
    fn seekers<'a>(&self, h: &dyn Classifier, trajs: &'a [Trajectory]) -> Result<Vec<&'a Trajectory>> {
        let t = self.cfg.population.issue_time;
        let who: Vec<&Trajectory> = trajs[self.cfg.train_size()..]
            .iter()
            .filter(|tr| h.predict_raw(&tr.states()[t]) < 0.5)
            .take(self.cfg.population.seekers)
            .collect();
        if who.is_empty() {
            bail!("no test individual is negatively classified at t={t}");
        }
        Ok(who)
    }

    fn recourse(&self, rep: usize) -> Result<()> {
        let truth = self.truth(rep)?;
        let trajs = self.trajectories(rep, &truth)?;
        let h = self.classifier(rep)?;
        let names = truth.names();
        let model = self.solver_model(rep, truth)?;
        let who = self.seekers(&h, &trajs)?;
        let t = self.cfg.population.issue_time;
        let seed = self.stage_seed(rep, Stage::Recourse);
        let mut rows = Vec::new();
        for (g, (method, epsilon)) in self.cfg.solver_grid().into_iter().enumerate() {
            let rc = self.cfg.solver(method, epsilon);
            let solved: Vec<(u64, RecourseOutcome)> = who
                .par_iter()
                .map(|tr| {
                    let s = rng::derive(seed, &[g as u64, tr.individual]);
                    let out = solve(&model, &h, tr.observed(t), &rc, s)
                        .with_context(|| format!("{method} (epsilon {epsilon}) for individual {}", tr.individual))?;
                    Ok((tr.individual, out))
                })
                .collect::<Result<_>>()?;
            rows.extend(solved);
        }
        bundle::write_outcomes(&self.path(rep, bundle::OUTCOMES), &names, &rows)
    }

    fn evaluate(&self, rep: usize) -> Result<()> {
        let truth = self.truth(rep)?;
        let trajs = self.trajectories(rep, &truth)?;
        let h = self.classifier(rep)?;
        let t = self.cfg.population.issue_time;
        let outcomes = bundle::read_outcomes(&self.path(rep, bundle::OUTCOMES), &truth.names(), t as i64)?;
        let by_id: HashMap<u64, &Trajectory> = trajs.iter().map(|tr| (tr.individual, tr)).collect();
        let mut groups: Vec<Vec<(u64, &RecourseOutcome)>> = Vec::new();
        for (ind, o) in &outcomes {
            match groups.last_mut() {
                Some(g) if g[0].1.method == o.method && g[0].1.epsilon == o.epsilon => g.push((*ind, o)),
                _ => groups.push(vec![(*ind, o)]),
            }
        }
        let eval = EvalConfig { rollouts: self.cfg.evaluation.rollouts, mode: self.cfg.evaluation.mode };
        let seed = self.stage_seed(rep, Stage::Evaluate);
        let records: Vec<Vec<_>> = groups
            .par_iter()
            .enumerate()
            .map(|(g, group)| {
                let cases = group
                    .iter()
                    .map(|(ind, o)| {
                        let tr = by_id.get(ind).with_context(|| format!("outcome for unknown individual {ind}"))?;
                        Ok((tr.observed(t), *o))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(validity_over_time(&truth, &h, &cases, &self.cfg.evaluation.lags, &eval, rng::derive(seed, &[g as u64]))?)
            })
            .collect::<Result<_>>()?;
        bundle::write_validity(&self.path(rep, bundle::VALIDITY), &records.concat())
    }

    /// Checks the linear stability bounds on the test population at every
    /// evaluation lag that stays inside the simulated horizon. The linear
    /// score is a box-constrained least-squares surrogate of the classifier
    /// centred on its threshold.
    fn bounds(&self, rep: usize) -> Result<()> {
        let truth = self.truth(rep)?;
        let trajs = self.trajectories(rep, &truth)?;
        let h = self.classifier(rep)?;
        let test = &trajs[self.cfg.train_size()..];
        let p = &self.cfg.population;
        let t = p.issue_time;
        let trends: Vec<TrendSpec> = truth.equations().iter().map(|eq| eq.trend.clone().unwrap_or_else(TrendSpec::none)).collect();
        // Stationary part: the same benchmark without its trend.
        let flat = build(BenchmarkId { trend: TrendKind::None, ..self.cfg.benchmark })?;
        let stationary: Vec<Vec<f64>> = flat
            .sample_trajectory(t, test.len(), self.stage_seed(rep, Stage::Bounds))?
            .iter()
            .map(|tr| tr.states()[t].clone())
            .collect();
        let x_t: Vec<Vec<f64>> = test.iter().map(|tr| tr.states()[t].clone()).collect();
        let target: Vec<f64> = x_t.iter().map(|x| h.predict_raw(x) - 0.5).collect();
        let max_abs = |rows: &[Vec<f64>]| rows.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut rows = Vec::new();
        for &lag in self.cfg.evaluation.lags.iter().filter(|&&l| t + l <= p.horizon) {
            let x_later: Vec<Vec<f64>> = test.iter().map(|tr| tr.states()[t + lag].clone()).collect();
            let shifted = |at: usize| -> Vec<Vec<f64>> {
                stationary
                    .iter()
                    .map(|s| s.iter().zip(&trends).map(|(v, m)| v + m.contribution(at as u64)).collect())
                    .collect()
            };
            let k = [max_abs(&x_t), max_abs(&x_later), max_abs(&shifted(t)), max_abs(&shifted(t + lag))]
                .into_iter()
                .fold(1.0, f64::max);
            let beta = fit_bounded_linear(&x_t, &target, k)?.model.beta;
            let row = |name: &str, r: BoundReport| BoundRow {
                bound: name.into(),
                lag,
                k,
                d: r.d,
                n: r.n,
                empirical: r.empirical,
                value: r.bound,
                slack: r.slack,
                ci: r.ci,
                holds: r.holds(),
            };
            rows.push(row("linear-validity", linear_validity_bound(k, &beta, &beta, &x_t, &x_later)?));
            rows.push(row("trend-validity", trend_validity_bound(k, &beta, &beta, &trends, t as u64, lag as u64, &stationary)?));
        }
        bundle::write_bounds(&self.path(rep, bundle::BOUNDS), &rows)
    }
}

pub fn open(config: &Path, output: Option<&Path>) -> Result<Experiment> {
    let cfg = ExperimentConfig::load(config)?;
    let root = crate::config::output_dir(&cfg, output);
    Ok(Experiment::new(cfg, root))
}
