use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use trecourse::recourse::Method;
use trecourse_cli::bundle::{self, Manifest, Stage, Status};
use trecourse_cli::config::{EstimatorMode, ExperimentConfig, OUTPUT_ENV, THREADS_ENV};
use trecourse_cli::pipeline::Experiment;
use trecourse_cli::report::{self, report};

fn minimal_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/minimal.toml")
}

fn minimal() -> ExperimentConfig {
    ExperimentConfig::load(&minimal_path()).unwrap()
}

/// Every file of a bundle, by relative path.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files: BTreeMap<String, Vec<u8>> =
        bundle::list_files(root).unwrap().into_iter().map(|p| (p.clone(), fs::read(root.join(&p)).unwrap())).collect();
    files.insert(bundle::MANIFEST.into(), fs::read(root.join(bundle::MANIFEST)).unwrap());
    files
}

#[test]
fn config_round_trips_through_its_canonical_form() {
    for cfg in [ExperimentConfig::default(), minimal()] {
        let canonical = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&canonical).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), canonical);
    }
    // The shipped file parses to the same value as its canonical form.
    let text = fs::read_to_string(minimal_path()).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), minimal());
}

#[test]
fn config_invariants_are_enforced() {
    let text = minimal().to_toml();
    let bad = [
        text.replace("repetitions = 1", "repetitions = 0"),
        text.replace("seekers = 10", "seekers = 41"),
        text.replace("train_fraction = 0.8", "train_fraction = 1.0"),
        text.replace("issue_time = 0", "issue_time = 21"),
        text.replace("estimator = \"true-scm\"", "estimator = \"fitted\""),
        text.replace("eta = 0.5", "eta = 0.0"),
        text.replace("kind = \"linear-anm\"", "kind = \"weather\""),
        text.replace("seed = 0", "seed = 0\ncolour = \"blue\""),
    ];
    for (i, t) in bad.iter().enumerate() {
        assert_ne!(t, &text, "case {i} did not change the config");
        assert!(ExperimentConfig::from_toml(t).is_err(), "case {i} was accepted");
    }
    // Exactly the test split is allowed.
    assert!(ExperimentConfig::from_toml(&text.replace("seekers = 10", "seekers = 40")).is_ok());
}

#[test]
fn hash_ignores_the_output_directory() {
    let a = minimal();
    let b = ExperimentConfig { output: "elsewhere".into(), ..a.clone() };
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), ExperimentConfig { seed: 1, ..a }.hash());
}

#[test]
fn minimal_run_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(minimal(), dir.path().to_path_buf());
    let m = exp.run().unwrap();
    assert_eq!(m.status, Status::Complete);
    assert!(m.missing.is_empty() && m.failure.is_none());
    let listed: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    for want in exp.expected_files() {
        assert!(listed.contains(&want.as_str()), "{want} not listed");
    }
    m.verify(dir.path()).unwrap();

    // Every configured method and radius gets a validity row per lag.
    let records = bundle::read_validity(&dir.path().join("rep-000").join(bundle::VALIDITY)).unwrap();
    assert_eq!(records.len(), exp.cfg.solver_grid().len() * exp.cfg.evaluation.lags.len());
    assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.validity)));
    let bounds = bundle::read_bounds(&dir.path().join("rep-000").join(bundle::BOUNDS)).unwrap();
    assert!(bounds.iter().all(|b| b.holds), "{bounds:?}");

    // A single repetition has zero spread.
    let r = report(dir.path()).unwrap();
    assert!(r.validity.iter().all(|v| v.reps == 1 && v.validity.sd == 0.0 && v.cost.sd == 0.0));
    assert_eq!(r.train_accuracy.sd, 0.0);
    let text = report::render(&r);
    assert!(text.contains("t-sar"), "{text}");
    // The report's own files are listed, so it can run again.
    Manifest::read(dir.path()).unwrap().verify(dir.path()).unwrap();
    assert_eq!(report(dir.path()).unwrap(), r);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Experiment::new(minimal(), a.path().to_path_buf()).run().unwrap();
    // Same config, run one stage at a time.
    let staged = Experiment::new(minimal(), b.path().to_path_buf());
    for stage in Stage::PIPELINE {
        staged.run_stages(&[stage], &[0]).unwrap();
    }
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    // And again in place.
    Experiment::new(minimal(), a.path().to_path_buf()).run().unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn fitted_and_perfect_estimators() {
    let mut cfg = minimal();
    cfg.population.issue_time = 10;
    cfg.recourse.methods = vec![Method::Car, Method::TSar];
    cfg.recourse.t_sar_tau = 5;
    cfg.evaluation.lags = vec![0, 5];
    for mode in [EstimatorMode::Fitted, EstimatorMode::Perfect] {
        cfg.estimator = mode;
        let dir = tempfile::tempdir().unwrap();
        let m = Experiment::new(cfg.clone(), dir.path().to_path_buf()).run().unwrap();
        assert!(m.files.iter().any(|f| f.path == "rep-000/estimator.json"), "{mode:?}");
        let text = fs::read_to_string(dir.path().join("rep-000/estimator.json")).unwrap();
        let schema = if mode == EstimatorMode::Fitted { "trecourse.estimator" } else { "trecourse.scm" };
        assert!(text.contains(schema));
        report(dir.path()).unwrap();
    }
}

#[test]
fn stage_failures_are_named_and_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(minimal(), dir.path().to_path_buf());
    exp.run_stages(&[Stage::Simulate], &[0]).unwrap();
    let partial = Manifest::read(dir.path()).unwrap();
    assert_eq!(partial.status, Status::Partial);
    assert!(partial.missing.contains(&"rep-000/classifier.json".to_string()));

    fs::write(dir.path().join("rep-000").join(bundle::TRAJECTORIES), "individual,t\n").unwrap();
    let err = exp.run_stages(&[Stage::Train], &[0]).unwrap_err();
    assert_eq!((err.stage, err.rep), (Stage::Train, Some(0)));
    assert!(err.to_string().starts_with("stage `train` failed in repetition 0"), "{err}");
    let m = Manifest::read(dir.path()).unwrap();
    assert_eq!(m.status, Status::Partial);
    assert_eq!(m.failure.unwrap().stage, Stage::Train);
    assert!(report(dir.path()).is_err());
}

#[test]
fn a_directory_holds_one_experiment() {
    let dir = tempfile::tempdir().unwrap();
    Experiment::new(minimal(), dir.path().to_path_buf()).run_stages(&[Stage::Simulate], &[0]).unwrap();
    let other = ExperimentConfig { seed: 9, ..minimal() };
    let err = Experiment::new(other, dir.path().to_path_buf()).run_stages(&[Stage::Simulate], &[0]).unwrap_err();
    assert!(err.message.contains("different config"), "{err}");
}

#[test]
fn report_rejects_bad_bundles() {
    let empty = tempfile::tempdir().unwrap();
    let err = report(empty.path()).unwrap_err().to_string();
    assert!(err.contains("manifest.json"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    Experiment::new(minimal(), dir.path().to_path_buf()).run().unwrap();
    fs::write(dir.path().join("rep-000/notes.txt"), "hand edits").unwrap();
    assert!(report(dir.path()).unwrap_err().to_string().contains("not listed"));
    fs::remove_file(dir.path().join("rep-000/notes.txt")).unwrap();

    let validity = dir.path().join("rep-000").join(bundle::VALIDITY);
    let original = fs::read(&validity).unwrap();
    fs::write(&validity, b"method\n").unwrap();
    assert!(report(dir.path()).unwrap_err().to_string().contains("hash"));
    fs::write(&validity, original).unwrap();
    report(dir.path()).unwrap();
}

/// Three hand-written repetitions with known means and deviations.
#[test]
fn report_matches_hand_computed_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let validity = [[1.0, 0.5], [0.5, 0.25], [0.0, 0.0]];
    let costs = [2.0, 4.0, 9.0];
    for (rep, (v, c)) in validity.iter().zip(costs).enumerate() {
        let rd = bundle::rep_dir(root, rep);
        let csv = format!(
            "method,epsilon,issue_time,eval_time,lag,n,validity,mean_cost,mean_sparsity\n\
             car,3,0,0,0,4,{},{c},1\ncar,3,0,10,10,4,{},{c},2\n",
            v[0], v[1]
        );
        bundle::write_text(&rd.join(bundle::VALIDITY), &csv).unwrap();
        let bounds = format!(
            "bound,lag,k,d,n,empirical,value,slack,ci,holds\nlinear-validity,10,2,3,4,{},5,1,0.1,{}\n",
            rep as f64,
            rep != 2
        );
        bundle::write_text(&rd.join(bundle::BOUNDS), &bounds).unwrap();
        let summary = format!("{{\"train_accuracy\": 0.9, \"test_accuracy\": {}, \"positive_rate\": 0.5}}", 0.7 + 0.1 * rep as f64);
        bundle::write_text(&rd.join(bundle::SUMMARY), &summary).unwrap();
    }
    let seeds = (0..3).map(|index| bundle::RepSeeds { index, master: index as u64, stages: BTreeMap::new() }).collect();
    Manifest::scan(root, "toy".into(), seeds, &[], None).unwrap().write(root).unwrap();

    let r = report(root).unwrap();
    assert_eq!(r.validity.len(), 2);
    let (first, later) = (&r.validity[0], &r.validity[1]);
    assert_eq!((first.lag, later.lag, first.reps), (0, 10, 3));
    // mean(1, .5, 0) = .5, sd = .5; mean(.5, .25, 0) = .25, sd = .25.
    assert!((first.validity.mean - 0.5).abs() < 1e-12 && (first.validity.sd - 0.5).abs() < 1e-12);
    assert!((later.validity.mean - 0.25).abs() < 1e-12 && (later.validity.sd - 0.25).abs() < 1e-12);
    // mean(2, 4, 9) = 5, sd = sqrt(13).
    assert!((first.cost.mean - 5.0).abs() < 1e-12 && (first.cost.sd - 13f64.sqrt()).abs() < 1e-12);
    assert_eq!((first.sparsity.mean, later.sparsity.mean), (1.0, 2.0));
    assert_eq!((r.bounds[0].holds, r.bounds[0].reps), (2, 3));
    assert!((r.bounds[0].empirical.mean - 1.0).abs() < 1e-12 && (r.bounds[0].empirical.sd - 1.0).abs() < 1e-12);
    assert!((r.test_accuracy.mean - 0.8).abs() < 1e-12 && (r.test_accuracy.sd - 0.1).abs() < 1e-12);

    let long = fs::read_to_string(root.join(report::REPORT_DIR).join(report::CURVES)).unwrap();
    assert_eq!(long.lines().count(), 1 + 3 * 2);
    assert!(long.contains("2,car,3,0,10,0\n"), "{long}");

    // Dropping one repetition's file is a missing-data error.
    fs::remove_file(bundle::rep_dir(root, 1).join(bundle::BOUNDS)).unwrap();
    let mut m = Manifest::read(root).unwrap();
    m.files.retain(|f| f.path != "rep-001/bounds.csv");
    m.write(root).unwrap();
    let err = report(root).unwrap_err().to_string();
    assert!(err.contains("repetition 1 is missing bounds.csv"), "{err}");
}

#[test]
fn binary_honours_environment_overrides() {
    let exe = env!("CARGO_BIN_EXE_trecourse");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let status = Command::new(exe)
            .args(["run", "--config"])
            .arg(minimal_path())
            .env(OUTPUT_ENV, dir.path())
            .env(THREADS_ENV, threads)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(snapshot(a.path()), snapshot(b.path()));

    let out = Command::new(exe).args(["report"]).arg(a.path()).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("validity"));

    let bad = Command::new(exe).args(["run", "--config"]).arg(minimal_path()).env(THREADS_ENV, "many").output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains(THREADS_ENV));

    let empty = tempfile::tempdir().unwrap();
    let missing = Command::new(exe).args(["report"]).arg(empty.path()).output().unwrap();
    assert!(!missing.status.success());
}
