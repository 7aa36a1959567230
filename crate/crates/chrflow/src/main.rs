//! Batch command-line front end for the Cahn-Hilliard reaction solvers.
//!
//! Three subcommands: `run` advances a configured problem and writes CSV
//! outputs, `verify` replays the library's property suites under a seed, and
//! `converge` runs refinement studies. Exit codes: 0 success, 1 failed solve
//! or failed check, 2 invalid configuration or usage.

// Validation guards are written as !(x > 0.0) on purpose: the negation also
// rejects NaN, which x <= 0.0 would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod converge;
mod formats;
mod runcmd;
mod verify;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// A command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or semantic misuse; exits 2 before any solve.
    Config(String),
    /// A solve, check, or IO step failed; exits 1.
    Run(String),
}

#[derive(Parser)]
#[command(
    name = "chrflow",
    version,
    about = "Batch solver for a Cahn-Hilliard model with reactive boundary conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configured problem and write trajectory/snapshot CSVs.
    Run {
        /// JSON configuration file.
        config: PathBuf,
    },
    /// Replay a module property suite with a fixed seed and write a report.
    Verify {
        /// Which suite to run.
        #[arg(long, value_enum)]
        suite: verify::Suite,
        /// Seed for the randomized inputs; equal seeds give byte-identical
        /// reports.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path (default verify_<suite>.csv; suite "all" writes the
        /// time-regularity rows to a *_sobolev.csv sibling).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a refinement study on a configured problem.
    Converge {
        /// Refined quantity: grid, time step, or fixed-point tolerance.
        #[arg(long, value_enum)]
        kind: converge::Kind,
        /// Number of refinement levels (at least 3).
        #[arg(long, value_parser = clap::value_parser!(u32).range(3..))]
        levels: u32,
        /// Accept a non-monotone error sequence instead of failing.
        #[arg(long)]
        allow_preasymptotic: bool,
        /// Report path (default converge_<kind>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON configuration file.
        config: PathBuf,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => runcmd::cmd_run(&config),
        Command::Verify { suite, seed, out } => verify::cmd_verify(suite, seed, out),
        Command::Converge { kind, levels, allow_preasymptotic, out, config } => {
            converge::cmd_converge(kind, levels as usize, allow_preasymptotic, &config, out)
        }
    };
    match result {
        Ok(()) => {}
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
