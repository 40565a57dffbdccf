//! `sbnn`: simulate targets, calibrate priors, sample, infer and score.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbnn_core::Error;

#[derive(Parser)]
#[command(name = "sbnn", version, about = "Spatial Bayesian neural network priors")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "SBNN_THREADS")]
    threads: Option<usize>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw target realisations.
    Simulate {
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Calibrate the prior hyper-parameters against the target.
    Calibrate,
    /// Draw fields from a calibrated prior.
    SamplePrior {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Sample the posterior given the configured dataset.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Empirical diagnostics of a realisation file.
    Diagnose {
        /// Realisation file to analyse.
        #[arg(long)]
        input: PathBuf,
        /// Lag bins beyond the zero-lag bin.
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Anchor points `x,y;x,y;...`; defaults to a 4 x 4 lattice.
        #[arg(long)]
        anchors: Option<String>,
        /// Quantile levels for exceedance curves, e.g. `0.95,0.99`.
        #[arg(long)]
        quantiles: Option<String>,
        /// Location for a marginal density estimate, e.g. `0.5,1`.
        #[arg(long)]
        kde_at: Option<String>,
    },
    /// Score predictive draws against true values.
    Score {
        /// Realisation file of predictive draws.
        #[arg(long)]
        draws: PathBuf,
        /// CSV whose last column holds the true values in grid order.
        #[arg(long)]
        truth: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::UnsupportedVariant(_) | Error::InsufficientData { .. } => 2,
        Error::NumericalFailure(_) | Error::NotPositiveDefinite { .. } => 3,
        Error::Format { .. } => 4,
        Error::Io { .. } => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let c = &cli.common;
    let result = match cli.command {
        Command::Simulate { count } => commands::simulate(c, count),
        Command::Calibrate => commands::calibrate(c),
        Command::SamplePrior { checkpoint, count } => commands::sample_prior(c, &checkpoint, count),
        Command::Infer { checkpoint } => commands::infer(c, &checkpoint),
        Command::Diagnose {
            input,
            bins,
            anchors,
            quantiles,
            kde_at,
        } => commands::diagnose(c, &input, bins, anchors.as_deref(), quantiles.as_deref(), kde_at.as_deref()),
        Command::Score { draws, truth } => commands::score(c, &draws, &truth),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
