//! `nvkm`: train, predict, evaluate, validate and sample NVKM models from a
//! declarative TOML run description.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nvkm::NvkmError;

#[derive(Debug, Parser)]
#[command(name = "nvkm", version, about = "Gaussian-process Volterra kernel models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model; writes checkpoint.nvkm, trace.csv and config.toml.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Try K VK ranges and keep the one with the lowest training NLPD.
        #[arg(long, value_name = "K")]
        range_search: Option<usize>,
    },
    /// Posterior predictive summaries as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evenly spaced times `start:end:count`.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "times_file", required_unless_present = "times_file")]
        grid: Option<String>,
        /// File with one time per line (an optional header line is skipped).
        #[arg(long)]
        times_file: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test-set NMSE, RMSE and NLPD per output.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/checkpoint.nvkm`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `training.eval_samples`.
        #[arg(long)]
        samples: Option<usize>,
        /// Defaults to the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report destination; defaults to `<output_dir>/evaluation.toml`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the closed forms against brute-force oracles.
    Validate {
        #[arg(long, value_enum, default_value_t = Level::Quick)]
        level: Level,
        /// Also run the suite with a sign error injected into I1a and
        /// require it to fail.
        #[arg(long)]
        mutation_check: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draws from the prior: input paths, VK diagonals and outputs.
    SamplePrior {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Time points across the model's span.
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Level {
    Quick,
    Full,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<NvkmError>() {
            return match e {
                NvkmError::InvalidArgument(_) | NvkmError::UnsupportedOrder(_) => EXIT_USAGE,
                NvkmError::IllConditionedGram { .. } | NvkmError::NumericInconsistency(_) | NvkmError::NonFinite(_) => {
                    EXIT_NUMERIC
                }
                _ => EXIT_DATA,
            };
        }
        if cause.is::<config::ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(c) = cause.downcast_ref::<commands::CommandError>() {
            return match c {
                commands::CommandError::Numeric(_) => EXIT_NUMERIC,
                commands::CommandError::Data(_) => EXIT_DATA,
                commands::CommandError::Usage(_) => EXIT_USAGE,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            out,
            range_search,
        } => commands::train(&config, out.as_deref(), range_search),
        Command::Predict {
            checkpoint,
            grid,
            times_file,
            samples,
            seed,
            out,
        } => commands::predict(&checkpoint, grid.as_deref(), times_file.as_deref(), samples, seed, out.as_deref()),
        Command::Evaluate {
            config,
            checkpoint,
            samples,
            seed,
            out,
        } => commands::evaluate(&config, checkpoint.as_deref(), samples, seed, out.as_deref()),
        Command::Validate {
            level,
            mutation_check,
            seed,
        } => {
            let level = match level {
                Level::Quick => nvkm::oracle::ValidationLevel::Quick,
                Level::Full => nvkm::oracle::ValidationLevel::Full,
            };
            commands::validate(level, mutation_check, seed)
        }
        Command::SamplePrior {
            config,
            samples,
            points,
            out,
        } => commands::sample_prior(&config, samples, points, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
