//! `locc`: analyses of POVM zonotopes and LOCC protocol trees, emitting
//! deterministic JSON reports.

mod commands;
mod error;
mod input;

use std::fs;
use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::commands::*;
use crate::error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "locc", version, about = "Zonotope geometry of LOCC measurements")]
struct Cli {
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Add wall-clock timing to the report. Timed reports are not
    /// reproducible byte for byte; the time is always echoed to stderr.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check positivity and completeness of a POVM.
    Validate(ValidateArgs),
    /// Nonnegative weights making a set of projectors complete.
    Weights(WeightsArgs),
    /// Membership of an operator in the zonotope of a POVM.
    Member(MemberArgs),
    /// Hausdorff distance between two POVM zonotopes.
    Hausdorff(HausdorffArgs),
    /// Search monotonic product-operator paths from the identity to outcomes.
    PathSearch(PathSearchArgs),
    /// Probe a neighbourhood of an outcome segment for product operators.
    Isolate(IsolateArgs),
    /// Build a random or given LOCC tree and check its branch paths.
    Simulate(SimulateArgs),
    /// Discrimination certificates along found paths.
    Prop1(Prop1Args),
    /// List built-in fixtures or print one.
    Ensembles(EnsemblesArgs),
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: Value,
    result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

#[derive(Serialize)]
struct Timing {
    elapsed_ms: f64,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize to JSON")
}

fn dispatch(command: &Command) -> CliResult<(&'static str, Value, Value)> {
    Ok(match command {
        Command::Validate(a) => ("validate", to_value(a), validate(a)?),
        Command::Weights(a) => ("weights", to_value(a), weights(a)?),
        Command::Member(a) => ("member", to_value(a), member(a)?),
        Command::Hausdorff(a) => ("hausdorff", to_value(a), hausdorff(a)?),
        Command::PathSearch(a) => ("path-search", to_value(a), path_search(a)?),
        Command::Isolate(a) => ("isolate", to_value(a), isolate(a)?),
        Command::Simulate(a) => ("simulate", to_value(a), simulate(a)?),
        Command::Prop1(a) => ("prop1", to_value(a), prop1(a)?),
        Command::Ensembles(a) => ("ensembles", to_value(a), ensembles(a)?),
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    let start = Instant::now();
    let (command, config, result) = dispatch(&cli.command)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let envelope = Envelope {
        tool: "locc",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        result,
        timing: cli.timing.then_some(Timing { elapsed_ms }),
    };
    let mut text = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
    text.push('\n');
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.into(),
            source,
        })?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        })?,
    }
    if cli.timing {
        eprintln!("{command}: {elapsed_ms:.1} ms");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
