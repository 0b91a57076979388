//! Analytical diffusion laboratory CLI.
//!
//! Configuration is layered key=value text: built-in defaults, then an
//! optional `--config` file, then trailing `key=value` overrides. Every run
//! writes a manifest into its output directory. Exit codes: 0 success,
//! 2 configuration error, 3 data-format error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adl::commands;
use adl::error::Result;

#[derive(Parser)]
#[command(
    name = "adl",
    version,
    about = "Training-free diffusion laboratory: closed-form denoisers, spectra, sensitivity fields, DDIM sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Plain-text key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides with highest precedence, e.g. `out=run1 seed=7`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset spectral statistics: eigenvalue spectrum, SNR table, mean and eigenvector images.
    Stats(CommonArgs),
    /// Binarized per-pixel sensitivity masks at the requested timesteps.
    Masks(CommonArgs),
    /// DDIM sampling with the configured denoisers from shared initial noise.
    Sample(CommonArgs),
    /// Jacobian row of one output pixel across timesteps, as heatmaps and raw rows.
    Sensitivity(CommonArgs),
    /// Inject the stencil pattern and re-measure the dataset statistics.
    Perturb(CommonArgs),
    /// Pairwise MSE / r-squared between denoiser predictions on noised images.
    Benchmark(CommonArgs),
    /// Nearest-neighbor distances of generated images to the training set.
    Nn(CommonArgs),
}

fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("ADL_THREADS") {
        let n: usize = raw.parse().map_err(|_| {
            adl::AdlError::Config(format!("ADL_THREADS: cannot parse '{raw}'"))
        })?;
        if n == 0 {
            return Err(adl::AdlError::Config("ADL_THREADS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| adl::AdlError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> Result<()> {
    init_threads()?;
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Stats(a) => ("stats", a),
        Command::Masks(a) => ("masks", a),
        Command::Sample(a) => ("sample", a),
        Command::Sensitivity(a) => ("sensitivity", a),
        Command::Perturb(a) => ("perturb", a),
        Command::Benchmark(a) => ("benchmark", a),
        Command::Nn(a) => ("nn", a),
    };
    let cfg = commands::resolve_config(args.config.as_deref(), &args.overrides)?;
    match name {
        "stats" => commands::cmd_stats(&cfg),
        "masks" => commands::cmd_masks(&cfg),
        "sample" => commands::cmd_sample(&cfg),
        "sensitivity" => commands::cmd_sensitivity(&cfg),
        "perturb" => commands::cmd_perturb(&cfg),
        "benchmark" => commands::cmd_benchmark(&cfg),
        _ => commands::cmd_nn(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
