//! nfmkv: mean-field game solver front end.
//!
//! Exit codes: 0 success, 2 input error, 3 runtime/training failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nfmkv_core::error::Error;
use nfmkv_core::trainer::{load_checkpoint, TrainState};

use commands::metrics::{compute_metrics, write_metric_artifacts, MetricOptions};
use commands::probe::ProbeKind;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "nfmkv", version, about = "Mean-field game equilibria via a flow-carried density path coupled to a forward-backward SDE value solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a configured problem and write the full artifact set.
    Solve {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the ring problem with the finite-difference reference solver.
    Reference {
        /// Spatial cells.
        #[arg(long, default_value_t = 128)]
        cells: usize,
        #[arg(long, default_value_t = 0.35)]
        sigma: f64,
        /// Initial density: uniform | sin:AMP[,FREQ] | wgm:W:MEAN:STD[;...].
        #[arg(long, default_value = "sin:0.2")]
        mu0: String,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Fixed-point tolerance.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out-reference")]
        out: PathBuf,
    },
    /// Recompute metrics from a checkpoint.
    Metrics {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out-metrics")]
        out: PathBuf,
        /// Print the comparison table to stdout.
        #[arg(long)]
        table: bool,
        /// Reference grid cells (ring problems).
        #[arg(long, default_value_t = 128)]
        reference_cells: usize,
        /// Samples per step for transport distances.
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
    /// Convergence and fidelity probes with pass/fail exit status.
    Probe {
        /// em-strong | em-weak | particle-rate | grad-check | flow-roundtrip.
        kind: ProbeKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::UnsupportedVersion { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, out, seed } => run_solve(config, out, seed),
        Command::Reference {
            cells,
            sigma,
            mu0,
            steps,
            horizon,
            tol,
            seed,
            out,
        } => commands::reference::run_reference(
            cells,
            sigma,
            &mu0,
            steps,
            horizon,
            tol,
            seed.unwrap_or(0),
            &out,
        ),
        Command::Metrics {
            checkpoint,
            out,
            table,
            reference_cells,
            samples,
        } => run_metrics(checkpoint, out, table, reference_cells, samples),
        Command::Probe { kind, seed } => commands::probe::run_probe(kind, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run_solve(
    config_path: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
) -> nfmkv_core::error::Result<()> {
    if !config_path.is_file() {
        return Err(Error::invalid(format!(
            "config file `{}` does not exist",
            config_path.display()
        )));
    }
    let text = std::fs::read_to_string(&config_path)?;
    let config = RunConfig::parse(&text)?;
    commands::solve::run_solve(&text, &config, &out, seed)
}

fn run_metrics(
    checkpoint_path: PathBuf,
    out: PathBuf,
    table: bool,
    reference_cells: usize,
    samples: usize,
) -> nfmkv_core::error::Result<()> {
    if !checkpoint_path.is_file() {
        return Err(Error::invalid(format!(
            "checkpoint `{}` does not exist",
            checkpoint_path.display()
        )));
    }
    let checkpoint = load_checkpoint(&checkpoint_path)?;
    let state = TrainState::from_checkpoint(&checkpoint)?;
    std::fs::create_dir_all(&out)?;
    artifacts::Manifest::new("metrics", state.config.seed, None).write(&out)?;
    let name = match state.problem.descriptor() {
        nfmkv_core::problems::ProblemDescriptor::Traffic { .. } => "traffic".to_string(),
        nfmkv_core::problems::ProblemDescriptor::Crowd { mu0, .. } => {
            format!("crowd{}d", mu0.dim())
        }
    };
    let computed = compute_metrics(
        &state,
        &name,
        &MetricOptions {
            metric_samples: samples,
            reference_cells,
            ..MetricOptions::default()
        },
    )?;
    write_metric_artifacts(&out, &state, &computed)?;
    if table {
        let mut report = nfmkv_core::metrics::MetricsReport::default();
        report.push(computed.run.clone());
        print!("{report}");
    }
    Ok(())
}
