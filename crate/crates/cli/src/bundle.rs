//! On-disk layout of a result bundle: per-repetition artifacts plus a
//! manifest listing every file with its SHA-256.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trecourse::analysis::ValidityRecord;
use trecourse::recourse::{Method, RecourseOutcome};
use trecourse::scm::{Mode, Trajectory};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "trecourse.manifest";
pub const CONFIG: &str = "config.toml";

pub const TRUTH: &str = "truth.json";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const CLASSIFIER: &str = "classifier.json";
pub const ESTIMATOR: &str = "estimator.json";
pub const OUTCOMES: &str = "outcomes.csv";
pub const VALIDITY: &str = "validity.csv";
pub const BOUNDS: &str = "bounds.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    Train,
    FitScm,
    Recourse,
    Evaluate,
    Bounds,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 6] = [Self::Simulate, Self::Train, Self::FitScm, Self::Recourse, Self::Evaluate, Self::Bounds];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Train => "train",
            Self::FitScm => "fit-scm",
            Self::Recourse => "recourse",
            Self::Evaluate => "evaluate",
            Self::Bounds => "bounds",
            Self::Report => "report",
        }
    }

    /// Files the stage writes into a repetition directory.
    pub fn outputs(self, with_estimator: bool) -> &'static [&'static str] {
        match self {
            Self::Simulate => &[TRUTH, TRAJECTORIES],
            Self::Train => &[CLASSIFIER, SUMMARY],
            Self::FitScm if with_estimator => &[ESTIMATOR],
            Self::FitScm => &[],
            Self::Recourse => &[OUTCOMES],
            Self::Evaluate => &[VALIDITY],
            Self::Bounds => &[BOUNDS],
            Self::Report => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A stage failure, named so the diagnostic says where the pipeline broke.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed{}: {message}", rep.map(|r| format!(" in repetition {r}")).unwrap_or_default())]
pub struct StageError {
    pub stage: Stage,
    pub rep: Option<usize>,
    pub message: String,
}

impl StageError {
    pub fn new(stage: Stage, rep: Option<usize>, err: anyhow::Error) -> Self {
        Self { stage, rep, message: format!("{err:#}") }
    }
}

pub fn rep_dir(root: &Path, rep: usize) -> PathBuf {
    root.join(format!("rep-{rep:03}"))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> anyhow::Error + '_ {
    move |e| anyhow::anyhow!("{}: {e}", path.display())
}

fn create_dirs(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_dirs(path)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    create_dirs(path)?;
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(csv_err(path))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str, text: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    text.parse().map_err(|e| anyhow::anyhow!("{}: bad {field} `{text}`: {e}", path.display()))
}

/// `individual,t,<vars>,label`; rows before the origin carry negative `t`
/// and keep the lag history needed for abduction at early issue times.
pub fn write_trajectories(path: &Path, names: &[String], trajs: &[Trajectory]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["individual".to_string(), "t".to_string()];
    header.extend(names.iter().cloned());
    header.push("label".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for tr in trajs {
        for (k, row) in tr.rows.iter().enumerate() {
            let t = k as i64 - tr.lead as i64;
            let label = if t >= 0 { tr.labels[t as usize].map(|y| y.to_string()).unwrap_or_default() } else { String::new() };
            let mut rec = vec![tr.individual.to_string(), t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            rec.push(label);
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_trajectories(path: &Path, dim: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut r = reader(path)?;
    let width = r.headers().map_err(csv_err(path))?.len();
    if width != dim + 3 {
        bail!("{}: expected {} columns, found {width}", path.display(), dim + 3);
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let individual: u64 = parse(path, "individual", &rec[0])?;
        let t: i64 = parse(path, "t", &rec[1])?;
        let row = (0..dim).map(|i| parse(path, "value", &rec[2 + i])).collect::<Result<Vec<f64>>>()?;
        let label = match &rec[dim + 2] {
            "" => None,
            s => Some(parse::<u8>(path, "label", s)?),
        };
        if out.last().map_or(true, |tr| tr.individual != individual) {
            out.push(Trajectory { individual, seed, lead: 0, rows: Vec::new(), labels: Vec::new() });
        }
        let tr = out.last_mut().expect("pushed above");
        if t < 0 {
            if !tr.labels.is_empty() {
                bail!("{}: individual {individual} has t={t} after the origin", path.display());
            }
            tr.lead += 1;
        } else {
            if t as usize != tr.labels.len() {
                bail!("{}: individual {individual} skips to t={t}", path.display());
            }
            tr.labels.push(label);
        }
        tr.rows.push(row);
    }
    if out.is_empty() {
        bail!("{}: no trajectories", path.display());
    }
    Ok(out)
}

/// One solved outcome per row; `theta` is dense over all variables.
pub fn write_outcomes(path: &Path, names: &[String], rows: &[(u64, RecourseOutcome)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["individual", "method", "epsilon", "tau", "converged", "cost", "set_size", "set", "response"]
        .map(String::from)
        .to_vec();
    header.extend(names.iter().map(|n| format!("theta_{n}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (ind, o) in rows {
        let set: Vec<&str> = o.features.iter().map(|&f| names[f].as_str()).collect();
        let mut rec = vec![
            ind.to_string(),
            o.method.to_string(),
            o.epsilon.to_string(),
            o.tau.to_string(),
            o.converged.to_string(),
            o.cost.to_string(),
            o.features.len().to_string(),
            set.join(";"),
            o.expected_response.to_string(),
        ];
        rec.extend(o.theta.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

/// Inverse of [`write_outcomes`] for outcomes issued at `issue_time`.
pub fn read_outcomes(path: &Path, names: &[String], issue_time: i64) -> Result<Vec<(u64, RecourseOutcome)>> {
    let mut r = reader(path)?;
    let width = r.headers().map_err(csv_err(path))?.len();
    if width != 9 + names.len() {
        bail!("{}: expected {} columns, found {width}", path.display(), 9 + names.len());
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let method: Method = parse(path, "method", &rec[1])?;
        let tau: usize = parse(path, "tau", &rec[3])?;
        let features = match &rec[7] {
            "" => Vec::new(),
            s => s
                .split(';')
                .map(|n| names.iter().position(|m| m == n).with_context(|| format!("{}: unknown variable `{n}`", path.display())))
                .collect::<Result<Vec<_>>>()?,
        };
        let outcome = RecourseOutcome {
            method,
            epsilon: parse(path, "epsilon", &rec[2])?,
            tau,
            theta: (0..names.len()).map(|i| parse(path, "theta", &rec[9 + i])).collect::<Result<_>>()?,
            features,
            mode: Mode::Soft,
            converged: parse(path, "converged", &rec[4])?,
            issue_time,
            apply_at: if method == Method::TSar { issue_time + tau as i64 } else { issue_time },
            epochs_used: 0,
            expected_response: parse(path, "response", &rec[8])?,
            cost: parse(path, "cost", &rec[5])?,
        };
        out.push((parse(path, "individual", &rec[0])?, outcome));
    }
    Ok(out)
}

pub fn write_validity(path: &Path, records: &[ValidityRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "epsilon", "issue_time", "eval_time", "lag", "n", "validity", "mean_cost", "mean_sparsity"])
        .map_err(csv_err(path))?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.epsilon.to_string(),
            r.issue_time.to_string(),
            r.eval_time.to_string(),
            (r.eval_time - r.issue_time).to_string(),
            r.n.to_string(),
            r.validity.to_string(),
            r.mean_cost.to_string(),
            r.mean_sparsity.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_validity(path: &Path) -> Result<Vec<ValidityRecord>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        out.push(ValidityRecord {
            method: parse(path, "method", &rec[0])?,
            epsilon: parse(path, "epsilon", &rec[1])?,
            issue_time: parse(path, "issue_time", &rec[2])?,
            eval_time: parse(path, "eval_time", &rec[3])?,
            n: parse(path, "n", &rec[5])?,
            validity: parse(path, "validity", &rec[6])?,
            mean_cost: parse(path, "mean_cost", &rec[7])?,
            mean_sparsity: parse(path, "mean_sparsity", &rec[8])?,
        });
    }
    Ok(out)
}

/// One verified bound at one lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub bound: String,
    pub lag: usize,
    pub k: f64,
    pub d: usize,
    pub n: usize,
    pub empirical: f64,
    pub value: f64,
    pub slack: f64,
    pub ci: f64,
    pub holds: bool,
}

pub fn write_bounds(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    if rows.is_empty() {
        w.write_record(["bound", "lag", "k", "d", "n", "empirical", "value", "slack", "ci", "holds"])
            .map_err(csv_err(path))?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_bounds(path: &Path) -> Result<Vec<BoundRow>> {
    let mut r = reader(path)?;
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

/// Per-repetition facts that are not tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepSeeds {
    pub index: usize,
    pub master: u64,
    /// Stage name to seed.
    pub stages: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub rep: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub config_sha256: String,
    pub repetitions: Vec<RepSeeds>,
    pub status: Status,
    /// Expected artifacts that are absent, relative to the bundle root.
    pub missing: Vec<String>,
    pub failure: Option<Failure>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Relative paths, `/`-separated, of every file under `root` except the
/// manifest, in sorted order.
pub fn list_files(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                let rel = rel.join("/");
                if rel != MANIFEST {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

impl Manifest {
    /// Hashes every file under `root`; `expected` names the artifacts a
    /// complete bundle has.
    pub fn scan(
        root: &Path,
        config_sha256: String,
        repetitions: Vec<RepSeeds>,
        expected: &[String],
        failure: Option<Failure>,
    ) -> Result<Self> {
        let files = list_files(root)?
            .into_iter()
            .map(|path| {
                let (sha256, bytes) = sha256_file(&root.join(&path))?;
                Ok(FileEntry { path, sha256, bytes })
            })
            .collect::<Result<Vec<_>>>()?;
        let missing: Vec<String> = expected.iter().filter(|e| !files.iter().any(|f| &f.path == *e)).cloned().collect();
        let status = if missing.is_empty() && failure.is_none() { Status::Complete } else { Status::Partial };
        Ok(Self { schema: MANIFEST_SCHEMA.into(), version: 1, config_sha256, repetitions, status, missing, failure, files })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_text(&root.join(MANIFEST), &text)
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            bail!("{} has no {MANIFEST}; not a result bundle", root.display());
        }
        let m: Self = serde_json::from_str(&read_text(&path)?).with_context(|| format!("malformed {}", path.display()))?;
        if m.schema != MANIFEST_SCHEMA || m.version > 1 {
            bail!("{}: unsupported manifest {} v{}", path.display(), m.schema, m.version);
        }
        Ok(m)
    }

    /// Every file on disk must be listed with a matching hash and every
    /// listed file must exist.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let on_disk = list_files(root)?;
        if let Some(extra) = on_disk.iter().find(|p| !self.files.iter().any(|f| &f.path == *p)) {
            bail!("{extra} is not listed in the manifest");
        }
        for f in &self.files {
            let path = root.join(&f.path);
            if !path.exists() {
                bail!("{} is listed in the manifest but missing", f.path);
            }
            if sha256_file(&path)?.0 != f.sha256 {
                bail!("{} does not match its manifest hash", f.path);
            }
        }
        Ok(())
    }
}
