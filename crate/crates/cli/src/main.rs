//! `mirrorscan` — plan, simulate and score adaptive-resolution captures with
//! a mirror-steered line-scan camera.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 bad input data,
//! 4 internal error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mirrorscan::controller::{DEFAULT_PORT, PORT_ENV};
use serde::Serialize;

use config::{ExperimentConfig, Overrides, UsageError};

#[derive(Parser)]
#[command(name = "mirrorscan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the low-res sweep plan and the wandering-patch plan
    Plan(Overrides),
    /// Run the adaptive capture and write cubes, attention and patch tokens
    Capture(Overrides),
    /// Score baselines and adaptive captures against ground truth
    Evaluate(Overrides),
    /// Run the emulated mirror controller on a TCP port
    ServeController(ServeArgs),
    /// Convert objective directions to mirror XY (or back with --xy), as CSV
    Geom(GeomArgs),
    /// Generate a synthetic scene cube
    Synth(SynthArgs),
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Pace position emissions with the wall clock
    #[arg(long)]
    pub realtime: bool,
}

#[derive(Debug, clap::Args)]
pub struct GeomArgs {
    /// "ox,oy,oz" directions (or "x,y" with --xy); read from stdin when absent
    #[arg(allow_hyphen_values = true)]
    pub values: Vec<String>,
    /// Inputs are mirror positions instead of directions
    #[arg(long)]
    pub xy: bool,
    #[arg(long)]
    pub swap_axes: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Labeled,
    Checkerboard,
    Quadrant,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "labeled")]
    pub kind: SynthKind,
    #[arg(short, long, default_value = "scene")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub bands: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 24)]
    pub regions: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Checkerboard square size
    #[arg(long, default_value_t = 32)]
    pub square: usize,
    /// Checkerboard edge half-width in pixels
    #[arg(long, default_value_t = 2.0)]
    pub softness: f64,
    /// Textured quadrant (0..4)
    #[arg(long, default_value_t = 0)]
    pub quadrant: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use mirrorscan::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                e if e.is_data_error() => 3,
                E::DimMismatch(_) | E::EmptyClass(_) => 3,
                E::SeatCollision { .. } | E::Straddle(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    4
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Plan(ov) => commands::plan(&ExperimentConfig::load(&ov)?),
        Command::Capture(ov) => commands::capture(&ExperimentConfig::load(&ov)?),
        Command::Evaluate(ov) => commands::evaluate(&ExperimentConfig::load(&ov)?),
        Command::ServeController(a) => commands::serve(&a),
        Command::Geom(a) => commands::geom(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
