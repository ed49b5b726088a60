//! Batch CLI around the library: parse a flat `key = value` config file,
//! run one command, and emit a single report to stdout or `--out`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use elastodual::config::parse_config;
use elastodual::report::emit;
use elastodual::runner::{run_command, Command};
use elastodual::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "elastodual",
    version,
    about = "Primal/dual solvers and duality-gap diagnostics for a stabilized nonlinear elasticity model on box grids",
    disable_help_subcommand = true
)]
struct Cli {
    /// One of: primal-solve, dual-solve, verify-duality, manufacture, gap-study.
    command: String,

    /// Path to the experiment config (flat `key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Write the report to this file instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Report format: `json` (full document) or `csv-series` (per-command series).
    #[arg(long, value_name = "FMT", default_value = "json")]
    format: String,

    /// Replace the config's grid dimensions, e.g. `9,9,9`.
    #[arg(long, value_name = "NX,NY,NZ")]
    grid_override: Option<String>,

    /// Replace the config's seed for sampled feasibility checks.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// `on` (default) or `off`; echoed into the report. Reductions are
    /// sequential and reproducible in both modes.
    #[arg(long, value_name = "on|off", default_value = "on")]
    deterministic: String,
}

fn parse_grid_override(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParameter {
            name: "grid-override".into(),
            reason: format!("expected three comma-separated dimensions, got {text:?}"),
        });
    }
    let mut dims = [0usize; 3];
    for (slot, part) in dims.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| Error::InvalidParameter {
            name: "grid-override".into(),
            reason: format!("{part:?} is not a valid dimension"),
        })?;
    }
    Ok(dims)
}

fn run(cli: &Cli) -> Result<()> {
    let command = Command::parse(&cli.command).ok_or_else(|| Error::InvalidParameter {
        name: "command".into(),
        reason: format!(
            "unknown command {:?}; expected one of primal-solve, dual-solve, verify-duality, manufacture, gap-study",
            cli.command
        ),
    })?;
    let deterministic = match cli.deterministic.as_str() {
        "on" => true,
        "off" => false,
        other => {
            return Err(Error::InvalidParameter {
                name: "deterministic".into(),
                reason: format!("expected `on` or `off`, got {other:?}"),
            })
        }
    };

    let mut config = parse_config(&cli.config)?;
    if let Some(text) = &cli.grid_override {
        config = config.with_grid_dims(parse_grid_override(text)?)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let document = run_command(command, &config, deterministic)?;
    let rendered = emit(&document, &cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
