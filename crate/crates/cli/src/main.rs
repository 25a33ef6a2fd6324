use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;

use commands::{EvaluateArgs, FitGmArgs, GenerateArgs, ReconstructArgs, ReproArgs, SampleArgs};
use config::{resolve, CmdResult};

/// Sampling and reconstruction of binary images bounded by algebraic curves.
///
/// Exit status: 0 on success, 2 on invalid input, 3 on numerical failure.
#[derive(Parser)]
#[command(name = "algshape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a shape fixture: polynomial JSON, or PGM for spline shapes.
    Generate(GenerateArgs),
    /// Sample a shape with a B-spline kernel; writes CSV plus a JSON sidecar.
    Sample(SampleArgs),
    /// Fit generalized-moment coefficients for a kernel.
    FitGm(FitGmArgs),
    /// Recover an implicit polynomial from samples.
    Reconstruct(ReconstructArgs),
    /// Compare reconstructions with a ground truth.
    Evaluate(EvaluateArgs),
    /// Run a named built-in scenario end to end.
    Repro(ReproArgs),
}

fn dispatch(matches: &ArgMatches) -> CmdResult<()> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match name {
        "generate" => commands::generate(&resolve(name, sub)?, sub),
        "sample" => commands::sample(&resolve(name, sub)?, sub),
        "fit-gm" => commands::fit_gm(&resolve(name, sub)?, sub),
        "reconstruct" => commands::reconstruct(&resolve(name, sub)?, sub),
        "evaluate" => commands::evaluate(&resolve(name, sub)?, sub),
        "repro" => commands::repro(&resolve(name, sub)?, sub),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    // validates the tree; values are re-read per subcommand
    let _ = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
