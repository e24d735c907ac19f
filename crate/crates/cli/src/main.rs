//! `sim <experiment> --config <path> [--out <dir>] [--threads N]`
//!
//! Exit status: 0 when every run completed (the stability grid always counts
//! as completed, Fail cells are part of its result), 1 when a run failed, 2
//! for invalid arguments or configs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use magnetoelastic::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use magnetoelastic::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    ConvergenceTime,
    UnitLength,
    EnergyDissipation,
    Nutation,
    Stability,
    SingleRun,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::ConvergenceTime => ExperimentKind::ConvergenceTime,
            Experiment::UnitLength => ExperimentKind::UnitLength,
            Experiment::EnergyDissipation => ExperimentKind::EnergyDissipation,
            Experiment::Nutation => ExperimentKind::Nutation,
            Experiment::Stability => ExperimentKind::Stability,
            Experiment::SingleRun => ExperimentKind::SingleRun,
        }
    }
}

/// Runs a named magnetoelastic experiment and writes CSV files.
#[derive(Debug, Parser)]
#[command(name = "sim", version)]
struct Cli {
    experiment: Experiment,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::Config(_) | Error::InvalidParameter { .. }));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    let experiment = ExperimentKind::from(cli.experiment);
    if cfg.experiment != experiment {
        log::info!("running {experiment} with a config written for {}", cfg.experiment);
        cfg.experiment = experiment;
        cfg.validate()?;
    }
    let out = cli
        .out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(experiment.name()));
    log::info!("{experiment}: writing to {}", out.display());
    let report = run_experiment(&cfg, &out)?;
    print!("{}", report.summary);
    for f in &report.files {
        log::info!("wrote {}", f.display());
    }
    if !report.all_completed {
        log::warn!("some runs did not complete");
    }
    Ok(report.all_completed)
}
