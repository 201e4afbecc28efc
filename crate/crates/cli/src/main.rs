//! `pcm-lab`: batch campaigns over the pcm-core modules.
//!
//! ```text
//! pcm-lab <subcommand> --config <path> [--out <dir>] [--workers <n>]
//! ```
//!
//! Writes `<subcommand>.csv` and `<subcommand>.json` into the output directory.
//! Exit status: 0 on success, 1 on a validation error, 2 on a numerical or I/O
//! failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod campaigns;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};

use config::CampaignConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn param(name: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("invalid parameter `{name}`: {reason}"))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }
}

impl From<pcm_core::Error> for CliError {
    fn from(e: pcm_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subcommand {
    HaarMoments,
    Concentration,
    MeanCheck,
    VarianceScaling,
    Gap,
    Simulate,
    ContourCheck,
    Propagator,
}

impl Subcommand {
    fn name(self) -> &'static str {
        match self {
            Subcommand::HaarMoments => "haar-moments",
            Subcommand::Concentration => "concentration",
            Subcommand::MeanCheck => "mean-check",
            Subcommand::VarianceScaling => "variance-scaling",
            Subcommand::Gap => "gap",
            Subcommand::Simulate => "simulate",
            Subcommand::ContourCheck => "contour-check",
            Subcommand::Propagator => "propagator",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pcm-lab", version, about = "Large-N O(N) principal chiral model campaigns")]
struct Args {
    subcommand: Subcommand,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `workers` in the config.
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", args.config.display())))?;
    let cfg = CampaignConfig::parse(&text)?;
    let sub = args.subcommand;
    let parameters = match sub {
        Subcommand::HaarMoments => cfg.haar_moments.validate().map(|_| serde_json::to_value(&cfg.haar_moments)),
        Subcommand::Concentration => cfg.concentration.validate().map(|_| serde_json::to_value(&cfg.concentration)),
        Subcommand::MeanCheck => cfg.mean_check.validate().map(|_| serde_json::to_value(&cfg.mean_check)),
        Subcommand::VarianceScaling => cfg
            .variance_scaling
            .validate()
            .map(|_| serde_json::to_value(&cfg.variance_scaling)),
        Subcommand::Gap => cfg.gap.validate().map(|_| serde_json::to_value(&cfg.gap)),
        Subcommand::Simulate => cfg.simulate.validate().map(|_| serde_json::to_value(&cfg.simulate)),
        Subcommand::ContourCheck => cfg.contour_check.validate().map(|_| serde_json::to_value(&cfg.contour_check)),
        Subcommand::Propagator => cfg.propagator.validate().map(|_| serde_json::to_value(&cfg.propagator)),
    }?
    .map_err(|e| CliError::Io(e.to_string()))?;

    let workers = match args.workers.or(cfg.workers) {
        Some(0) => return Err(CliError::param("workers", "must be at least 1")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("pcm-lab-out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let clock = Instant::now();
    let seed = cfg.seed;
    let (table, summary) = pool.install(|| match sub {
        Subcommand::HaarMoments => campaigns::haar_moments(&cfg.haar_moments, seed),
        Subcommand::Concentration => campaigns::concentration(&cfg.concentration, seed),
        Subcommand::MeanCheck => campaigns::mean_check(&cfg.mean_check, seed),
        Subcommand::VarianceScaling => campaigns::variance_scaling(&cfg.variance_scaling, seed),
        Subcommand::Gap => campaigns::gap(&cfg.gap, seed),
        Subcommand::Simulate => campaigns::simulate_campaign(&cfg.simulate, seed),
        Subcommand::ContourCheck => campaigns::contour_check(&cfg.contour_check, seed),
        Subcommand::Propagator => campaigns::propagator(&cfg.propagator, seed),
    })?;
    let seconds = clock.elapsed().as_secs_f64();

    table.write(&out.join(format!("{}.csv", sub.name())))?;
    report::write_summary(
        &out.join(format!("{}.json", sub.name())),
        sub.name(),
        seed,
        workers,
        parameters,
        &summary,
        table.len(),
        seconds,
    )?;
    println!("{}: {} rows in {seconds:.2}s -> {}", sub.name(), table.len(), out.display());
    for (k, v) in summary.criteria.as_object().into_iter().flatten() {
        println!("  {k}: {v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcm-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
