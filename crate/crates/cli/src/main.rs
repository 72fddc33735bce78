use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use trecourse_cli::bundle::Stage;
use trecourse_cli::config::{threads, OUTPUT_ENV, THREADS_ENV};
use trecourse_cli::{pipeline, report};

#[derive(Parser)]
#[command(name = "trecourse", version, about = "Temporal causal recourse experiments")]
#[command(after_help = format!("Environment: {OUTPUT_ENV} overrides the output directory, {THREADS_ENV} the worker count."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Repetition to process; all when omitted.
    #[arg(long)]
    rep: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories and labels.
    Simulate(StageArgs),
    /// Train the classifier at t = 0.
    Train(StageArgs),
    /// Fit the estimator of the process, if the config asks for one.
    FitScm(StageArgs),
    /// Solve recourse for the negatively classified test individuals.
    Recourse(StageArgs),
    /// Measure validity at each evaluation lag.
    Evaluate(StageArgs),
    /// Verify the linear stability bounds.
    Bounds(StageArgs),
    /// Run every stage.
    Run(StageArgs),
    /// Aggregate a finished bundle across repetitions.
    Report {
        /// Result directory.
        dir: PathBuf,
    },
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<()> {
    let exp = pipeline::open(&args.config, args.out.as_deref())?;
    let reps: Vec<usize> = match args.rep {
        Some(r) if r >= exp.cfg.repetitions => anyhow::bail!("repetition {r} is out of range"),
        Some(r) => vec![r],
        None => (0..exp.cfg.repetitions).collect(),
    };
    let manifest = exp.run_stages(stages, &reps)?;
    eprintln!("wrote {} ({} files, {:?})", exp.root.display(), manifest.files.len(), manifest.status);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|n| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        match &cli.command {
            Command::Simulate(a) => run_stages(a, &[Stage::Simulate]),
            Command::Train(a) => run_stages(a, &[Stage::Train]),
            Command::FitScm(a) => run_stages(a, &[Stage::FitScm]),
            Command::Recourse(a) => run_stages(a, &[Stage::Recourse]),
            Command::Evaluate(a) => run_stages(a, &[Stage::Evaluate]),
            Command::Bounds(a) => run_stages(a, &[Stage::Bounds]),
            Command::Run(a) => run_stages(a, &Stage::PIPELINE),
            Command::Report { dir } => report::report(dir).map(|r| print!("{}", report::render(&r))),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
