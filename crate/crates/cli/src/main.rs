use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use isd_cli::{load, output_dir, run, CliError, Command};

/// Intermittent signal detection experiments.
#[derive(Debug, Parser)]
#[command(name = "isd", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,

    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Output directory (default: config `out`, else out/<command>).
    #[arg(short, long)]
    out: Option<PathBuf>,

    /// Worker thread cap; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,

    /// Override a config field, e.g. --set model.rho=0.02 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Invalid {
                field: "--threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid {
                field: "--threads".into(),
                reason: e.to_string(),
            })?;
    }
    let cfg = load(args.config.as_deref(), &args.overrides)?;
    let out = output_dir(args.command, args.out.as_deref(), &cfg);
    let summary = run(args.command, &cfg, &out)?;
    println!("{}", serde_json::to_string_pretty(&summary["result"])?);
    eprintln!("wrote {}", out.display());
    Ok(())
}
