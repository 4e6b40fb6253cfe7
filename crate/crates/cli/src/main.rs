//! `twirlcorr`: run an experiment, write its CSV and manifest.
//!
//! Exit status: 0 on success, 2 for invalid configuration, 3 when a run is
//! refused for its size, 1 for any other failure.

mod commands;
mod output;
mod settings;

use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::Parser;

use crate::commands::Refusal;
use crate::settings::{config_error, Cli, Command, ConfigError, Settings};

const THREADS_VAR: &str = "TWIRLCORR_THREADS";

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let k: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| config_error(THREADS_VAR, format!("`{v}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let name = cli.command.name();
    let runner: fn(&Settings) -> Result<commands::Report> = match &cli.command {
        Command::Analytic { .. } => commands::analytic,
        Command::Bounds { .. } => commands::bounds,
        Command::Mc { .. } => commands::mc,
        Command::Ensemble { .. } => commands::ensemble,
        Command::Qasm { .. } => commands::qasm_info,
        Command::Repcode { .. } => commands::repcode,
        Command::FtMask { .. } => commands::ft_mask,
        Command::Qkernel { .. } => commands::qkernel,
        Command::Sweep { .. } => commands::sweep,
    };
    let (config, flags) = cli.command.into_settings();
    let settings = match config {
        Some(path) => flags.over(Settings::load(&path)?),
        None => flags,
    };
    let started = Instant::now();
    let report = runner(&settings)?;
    output::emit(name, &settings, &report, started.elapsed())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        2
    } else if e.downcast_ref::<Refusal>().is_some()
        || matches!(e.downcast_ref::<twirlcorr::Error>(), Some(twirlcorr::Error::ResourceLimit(_)))
    {
        3
    } else {
        1
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
