//! Command-line front end: TOML configs, ROMF archives, CSV outputs and
//! the `generate / train / predict / evaluate / sweep / inspect` commands.

pub mod archive;
pub mod commands;
pub mod config;
pub mod tables;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use clstm_rom::RomError;

use commands::Context;

#[derive(Debug, Parser)]
#[command(
    name = "clstm-rom",
    version,
    about = "Partitioning-averaging C-LSTM forecaster for parametric dynamics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate or synthesize the configured trajectories and write them as CSV.
    Generate,
    /// Train a model and save it to `<out>/model.romf`.
    Train,
    /// Forecast every test trajectory.
    Predict {
        /// Archive to load instead of `<out>/model.romf`.
        model: Option<PathBuf>,
    },
    /// Score forecasts and write metrics.csv.
    Evaluate { model: Option<PathBuf> },
    /// Train and score every combination of the `[sweep]` lists.
    Sweep,
    /// Print an archive manifest, or the config summary when there is no archive.
    Inspect { model: Option<PathBuf> },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &RomError) -> i32 {
    match e {
        RomError::Config { .. } => EXIT_CONFIG,
        RomError::Divergence { .. } => EXIT_DIVERGENCE,
        RomError::Io(_) | RomError::Archive(_) => EXIT_IO,
        RomError::Shape(_) | RomError::Input(_) | RomError::Degenerate(_) => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> Result<String, RomError> {
    let path = cli.config.clone().ok_or_else(|| RomError::Config {
        line: 0,
        message: "--config PATH is required".into(),
    })?;
    let config = config::load(&path).map_err(|e| match e {
        RomError::Io(io) => RomError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })?;
    let ctx = Context::new(config, cli.seed, cli.out);
    match &cli.command {
        Command::Generate => {
            let files = commands::generate(&ctx)?;
            Ok(format!(
                "wrote {} files under {}",
                files.len(),
                ctx.out.join("trajectories").display()
            ))
        }
        Command::Train => commands::train(&ctx),
        Command::Predict { model } => {
            let files = commands::predict(&ctx, model.as_deref())?;
            Ok(format!(
                "wrote {} forecasts under {}",
                files.len(),
                ctx.out.join("predictions").display()
            ))
        }
        Command::Evaluate { model } => commands::evaluate_cmd(&ctx, model.as_deref()),
        Command::Sweep => commands::sweep(&ctx),
        Command::Inspect { model } => commands::inspect(&ctx, model.as_deref()),
    }
}
