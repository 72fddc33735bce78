//! Aggregation of a result bundle across repetitions.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use trecourse::analysis::{mean_sd, ValidityRecord};
use trecourse::recourse::Method;

use crate::bundle::{self, BoundRow, Manifest, RepSummary, Status};

pub const REPORT_DIR: &str = "report";
pub const TABLE: &str = "table.csv";
pub const CURVES: &str = "validity_long.csv";
pub const BOUNDS_TABLE: &str = "bounds.csv";
pub const CLASSIFIER_TABLE: &str = "classifier.csv";

/// Mean and sample standard deviation over repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    fn of(v: &[f64]) -> Self {
        let (mean, sd) = mean_sd(v);
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityRow {
    pub method: Method,
    pub epsilon: f64,
    pub lag: i64,
    pub reps: usize,
    pub validity: Stat,
    pub cost: Stat,
    pub sparsity: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSummary {
    pub bound: String,
    pub lag: usize,
    pub reps: usize,
    pub holds: usize,
    pub empirical: Stat,
    pub value: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub validity: Vec<ValidityRow>,
    pub bounds: Vec<BoundSummary>,
    pub train_accuracy: Stat,
    pub test_accuracy: Stat,
}

fn require(m: &Manifest, rep: usize, file: &str) -> Result<String> {
    let rel = format!("rep-{rep:03}/{file}");
    if !m.files.iter().any(|f| f.path == rel) {
        bail!("repetition {rep} is missing {file}");
    }
    Ok(rel)
}

/// Group rows by key in first-seen order.
fn group<K: PartialEq, V>(items: impl IntoIterator<Item = (K, V)>) -> Vec<(K, Vec<V>)> {
    let mut out: Vec<(K, Vec<V>)> = Vec::new();
    for (k, v) in items {
        match out.iter_mut().find(|(key, _)| *key == k) {
            Some((_, vs)) => vs.push(v),
            None => out.push((k, vec![v])),
        }
    }
    out
}

/// Reads a verified bundle, writes the aggregated tables under `report/`
/// and lists them in the manifest.
pub fn report(root: &Path) -> Result<Report> {
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    let mut manifest = Manifest::read(root)?;
    manifest.verify(root)?;
    if manifest.status != Status::Complete {
        bail!("the bundle is partial; missing {:?}", manifest.missing);
    }
    if manifest.repetitions.is_empty() {
        bail!("the manifest lists no repetitions");
    }
    let mut validity = Vec::new();
    let mut curves = Vec::new();
    let mut bounds = Vec::new();
    let mut summaries = Vec::new();
    for seeds in &manifest.repetitions {
        let rep = seeds.index;
        let records = bundle::read_validity(&root.join(require(&manifest, rep, bundle::VALIDITY)?))?;
        for r in &records {
            curves.push((rep, r.clone()));
            validity.push(((r.method, r.epsilon.to_bits(), r.eval_time - r.issue_time), r.clone()));
        }
        let rows: Vec<BoundRow> = bundle::read_bounds(&root.join(require(&manifest, rep, bundle::BOUNDS)?))?;
        bounds.extend(rows.into_iter().map(|b| ((b.bound.clone(), b.lag), b)));
        let text = bundle::read_text(&root.join(require(&manifest, rep, bundle::SUMMARY)?))?;
        let s: RepSummary = serde_json::from_str(&text).with_context(|| format!("malformed summary in repetition {rep}"))?;
        summaries.push(s);
    }
    let validity: Vec<ValidityRow> = group(validity)
        .into_iter()
        .map(|((method, eps, lag), rs)| ValidityRow {
            method,
            epsilon: f64::from_bits(eps),
            lag,
            reps: rs.len(),
            validity: Stat::of(&rs.iter().map(|r| r.validity).collect::<Vec<_>>()),
            cost: Stat::of(&rs.iter().map(|r| r.mean_cost).collect::<Vec<_>>()),
            sparsity: Stat::of(&rs.iter().map(|r| r.mean_sparsity).collect::<Vec<_>>()),
        })
        .collect();
    let bounds: Vec<BoundSummary> = group(bounds)
        .into_iter()
        .map(|((bound, lag), rs)| BoundSummary {
            bound,
            lag,
            reps: rs.len(),
            holds: rs.iter().filter(|r| r.holds).count(),
            empirical: Stat::of(&rs.iter().map(|r| r.empirical).collect::<Vec<_>>()),
            value: Stat::of(&rs.iter().map(|r| r.value).collect::<Vec<_>>()),
        })
        .collect();
    let report = Report {
        validity,
        bounds,
        train_accuracy: Stat::of(&summaries.iter().map(|s| s.train_accuracy).collect::<Vec<_>>()),
        test_accuracy: Stat::of(&summaries.iter().map(|s| s.test_accuracy).collect::<Vec<_>>()),
    };
    write_tables(&root.join(REPORT_DIR), &report, &curves)?;
    manifest.files = Manifest::scan(root, String::new(), Vec::new(), &[], None)?.files;
    manifest.write(root)?;
    Ok(report)
}

fn write_tables(dir: &Path, report: &Report, curves: &[(usize, ValidityRecord)]) -> Result<()> {
    let mut table = String::from(
        "method,epsilon,lag,reps,validity_mean,validity_sd,cost_mean,cost_sd,sparsity_mean,sparsity_sd\n",
    );
    for r in &report.validity {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method, r.epsilon, r.lag, r.reps, r.validity.mean, r.validity.sd, r.cost.mean, r.cost.sd, r.sparsity.mean, r.sparsity.sd
        )
        .expect("writing to a string");
    }
    bundle::write_text(&dir.join(TABLE), &table)?;

    let mut long = String::from("rep,method,epsilon,issue_time,eval_time,validity\n");
    for (rep, r) in curves {
        writeln!(long, "{rep},{},{},{},{},{}", r.method, r.epsilon, r.issue_time, r.eval_time, r.validity).expect("writing to a string");
    }
    bundle::write_text(&dir.join(CURVES), &long)?;

    let mut b = String::from("bound,lag,reps,holds,empirical_mean,empirical_sd,value_mean,value_sd\n");
    for r in &report.bounds {
        writeln!(b, "{},{},{},{},{},{},{},{}", r.bound, r.lag, r.reps, r.holds, r.empirical.mean, r.empirical.sd, r.value.mean, r.value.sd)
            .expect("writing to a string");
    }
    bundle::write_text(&dir.join(BOUNDS_TABLE), &b)?;

    let c = format!(
        "metric,mean,sd\ntrain_accuracy,{},{}\ntest_accuracy,{},{}\n",
        report.train_accuracy.mean, report.train_accuracy.sd, report.test_accuracy.mean, report.test_accuracy.sd
    );
    bundle::write_text(&dir.join(CLASSIFIER_TABLE), &c)
}

/// Human-readable table: one line per method, radius and lag.
pub fn render(report: &Report) -> String {
    let pm = |s: Stat| format!("{:.3} ± {:.3}", s.mean, s.sd);
    let mut out = format!(
        "classifier accuracy: train {}, test {}\n\n{:<8} {:>8} {:>5} {:>16} {:>16} {:>16}\n",
        pm(report.train_accuracy),
        pm(report.test_accuracy),
        "method",
        "epsilon",
        "lag",
        "validity",
        "cost",
        "|I|"
    );
    for r in &report.validity {
        writeln!(out, "{:<8} {:>8} {:>5} {:>16} {:>16} {:>16}", r.method.to_string(), r.epsilon, r.lag, pm(r.validity), pm(r.cost), pm(r.sparsity))
            .expect("writing to a string");
    }
    if !report.bounds.is_empty() {
        writeln!(out, "\n{:<11} {:>5} {:>6} {:>16} {:>16}", "bound", "lag", "holds", "empirical", "bound value").expect("writing to a string");
        for b in &report.bounds {
            writeln!(out, "{:<11} {:>5} {:>6} {:>16} {:>16}", b.bound, b.lag, format!("{}/{}", b.holds, b.reps), pm(b.empirical), pm(b.value))
                .expect("writing to a string");
        }
    }
    out
}
