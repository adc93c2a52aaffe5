//! Reproducible experiment runner around `isd-core`.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{load, RunConfig};
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Detect,
    Montecarlo,
    Soc,
    Occstudy,
    Dp,
    Aircraft,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Detect => "detect",
            Command::Montecarlo => "montecarlo",
            Command::Soc => "soc",
            Command::Occstudy => "occstudy",
            Command::Dp => "dp",
            Command::Aircraft => "aircraft",
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'static str,
    config_sha256: String,
    config: &'a RunConfig,
    outputs: Vec<String>,
    result: serde_json::Value,
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash(cfg: &RunConfig) -> Result<String, CliError> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output directory: explicit flag, then the config's `out`, then
/// `out/<command>`.
pub fn output_dir(command: Command, flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| Path::new("out").join(command.name()))
}

/// Runs `command` and writes its outputs plus `summary.json` into `out`.
/// Returns the summary as JSON.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let outcome = match command {
        Command::Simulate => commands::simulate(cfg, out),
        Command::Detect => commands::detect(cfg, out),
        Command::Montecarlo => commands::montecarlo(cfg, out),
        Command::Soc => commands::soc(cfg, out),
        Command::Occstudy => commands::occstudy(cfg, out),
        Command::Dp => commands::dp(cfg, out),
        Command::Aircraft => commands::aircraft(cfg, out),
    }?;
    let mut outputs = outcome.outputs;
    outputs.push("summary.json".into());
    let summary = Summary {
        command: command.name(),
        config_sha256: config_hash(cfg)?,
        config: cfg,
        outputs,
        result: outcome.result,
    };
    let value = serde_json::to_value(&summary)?;
    let path = out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(value)
}
