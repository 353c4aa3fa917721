//! Command-line driver: data generation, GP training, controller synthesis,
//! simulation, Monte Carlo verification and export.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod files;

use commands::{DynamicsSource, PlantChoice};
use config::ConfigArgs;
pub use error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "gpbas", version, about = "Safe trajectory optimization with GP-learned dynamics and barrier states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the environment's training recipe to dataset.csv.
    GenData(#[command(flatten)] ConfigArgs),
    /// Fit the GP dynamics model to model.json.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Dataset CSV; defaults to <output-dir>/dataset.csv.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Infinite-horizon LQR on the embedded model.
    Lqr(SolveArgs),
    /// Barrier-state DDP over the course horizon.
    Ddp(SolveArgs),
    /// Replay a saved policy.
    Simulate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        plant: PlantChoice,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Monte Carlo safety check of a saved policy under the GP posterior.
    Verify {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write the resolved config, course and config schema.
    Export(#[command(flatten)] ConfigArgs),
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub args: ConfigArgs,
    /// GP model JSON; defaults to <output-dir>/model.json.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub dynamics: DynamicsSource,
}

/// Run one command and return the files it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&config::resolve(&a)?),
        Command::Train { args, data } => commands::train(&config::resolve(&args)?, data.as_deref()),
        Command::Lqr(s) => commands::lqr(&config::resolve(&s.args)?, s.dynamics, s.model.as_deref()),
        Command::Ddp(s) => commands::ddp(&config::resolve(&s.args)?, s.dynamics, s.model.as_deref()),
        Command::Simulate { args, policy, plant, model } => {
            commands::simulate(&config::resolve(&args)?, &policy, plant, model.as_deref())
        }
        Command::Verify { args, policy, model } => {
            commands::verify(&config::resolve(&args)?, &policy, model.as_deref())
        }
        Command::Export(a) => commands::export(&config::resolve(&a)?),
    }
}
