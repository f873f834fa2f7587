mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "advlab", version, about = "Adversarial encoder-decoder training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset (PGM/PPM images and a ground-truth CSV).
    GenData(Common),
    /// Train one generator (modes ae, adv, adv-paired, i2i).
    Train(Common),
    /// Train a family of runs along one axis and write a merged report.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Two-dimensional adversarial dynamics with a residual generator.
    GeoDemo {
        #[command(flatten)]
        common: OptionalConfig,
        /// Number of data points.
        #[arg(long)]
        n: Option<usize>,
        /// Critic/generator alternations.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Finite-difference check of every differentiable op (64-bit).
    GradCheck {
        /// Random points per op.
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Test fixture: check a deliberately broken op.
        #[arg(long, hide = true, value_parser = ["conv2d"])]
        inject_fault: Option<String>,
    },
    /// Repeat a recorded command from its manifest into a new directory.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Bottleneck,
    DatasetSize,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel runs (sweeps only); results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct OptionalConfig {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c.config, &c.out, c.seed),
        Command::Train(c) => commands::train(&c.config, &c.out, c.seed),
        Command::Sweep { common: c, axis } => commands::sweep(&c.config, &c.out, c.seed, axis, c.workers),
        Command::GeoDemo { common: c, n, iters } => commands::geo_demo(c.config.as_deref(), &c.out, c.seed, n, iters),
        Command::GradCheck { seeds, seed, out, inject_fault } => {
            commands::grad_check(seeds, seed, out.as_deref(), inject_fault.is_some())
        }
        Command::Rerun { manifest, out, workers } => commands::rerun(&manifest, &out, workers),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
