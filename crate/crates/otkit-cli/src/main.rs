//! `otkit`: optimal transport from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 solver non-convergence (the JSON
//! report is still written, with `converged: false`).

mod barycenter;
mod common;
mod dist;
mod error;
mod interpolate;
mod io;
mod plotdata;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "otkit", version, about = "Optimal transport solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transport cost between two measures.
    Dist(dist::DistArgs),
    /// Entropic barycenter of histograms on a shared grid.
    Barycenter(barycenter::BarycenterArgs),
    /// Snapshots of the displacement interpolation between two measures.
    Interpolate(interpolate::InterpolateArgs),
    /// CSV columns from the series stored in a run report.
    Plotdata(plotdata::PlotdataArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Dist(args) => dist::run(&args).and_then(|r| common::emit(&args.common, &r)),
        Command::Barycenter(args) => barycenter::run(&args).and_then(|r| common::emit(&args.common, &r)),
        Command::Interpolate(args) => interpolate::run(&args).and_then(|r| common::emit(&args.common, &r)),
        Command::Plotdata(args) => plotdata::run(&args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("otkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

