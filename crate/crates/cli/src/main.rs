//! `fbl`: theory curves, baseline sweeps, and autoencoder training and
//! evaluation for short blocks over the complex AWGN channel.
//!
//! Exit status is 0 on success, 1 on any error, and 2 when a run completes
//! but misses a soft target (an ordering violation or an empty rate search).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fbl_core::harness::Scheme;

#[derive(Parser, Debug)]
#[command(name = "fbl", version, about = "Finite-blocklength coding lab")]
struct Cli {
    /// Root seed; overrides the config file's `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Evaluation threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output directory; overrides the config file's `output.dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normal-approximation rate over an SNR grid, as CSV
    Theory {
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
        /// `start:stop:step` in dB (inclusive) or a comma list
        #[arg(long, default_value = "0:20:1", allow_hyphen_values = true)]
        snr: String,
    },
    /// Train an autoencoder from a config file
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Frame error probability of a saved autoencoder
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        snr: f64,
        #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
        frames: u64,
        /// Target used for the `meets_target` column
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
    },
    /// Rate search for every scheme at every SNR of a config file
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rate search for one scheme at one SNR
    RateSearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scheme: Scheme,
        /// Defaults to the config's evaluation SNR
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
    },
    /// Polar and Reed-Muller rate searches without a config file
    Baseline {
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
        #[arg(long, default_value = "6,10,14", allow_hyphen_values = true)]
        snr: String,
        #[arg(long, default_value_t = 1_000_000)]
        frames: u64,
        #[arg(long, value_delimiter = ',', default_value = "polar_qam,rm_qam")]
        schemes: Vec<Scheme>,
    },
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    SoftFail,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::SoftFail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
