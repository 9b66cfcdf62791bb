//! `bdt`: offline behavior distillation toolkit for tabular MDPs.
//!
//! Subcommands cover the full pipeline: generate an environment, log
//! behavior-tier data, extract a pessimistic near-optimal policy, distill a
//! tiny synthetic cloning set, evaluate it, and verify the supporting
//! performance-gap identities and bounds.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure, 3 failed
//! assertion or bound.

use bdt_cli::commands;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bdt",
    version,
    about = "Offline behavior distillation for tabular MDPs",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a gridworld or random MDP environment file.
    GenEnv(commands::gen_env::GenEnvArgs),
    /// Roll out a behavior tier and log an offline dataset.
    GenData(commands::gen_data::GenDataArgs),
    /// Extract a near-optimal policy from logged data by pessimistic planning.
    Extract(commands::extract::ExtractArgs),
    /// Distill a synthetic cloning set by bi-level optimization.
    Distill(commands::distill::DistillArgs),
    /// Clone a synthetic set across seeds and report normalized returns.
    Eval(commands::eval::EvalArgs),
    /// Check the performance-gap identity, bounds, and tightness cases.
    VerifyTheory(commands::verify_theory::VerifyTheoryArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help to stdout and errors to stderr on its own.
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::GenEnv(args) => commands::gen_env::run(args),
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Extract(args) => commands::extract::run(args),
        Command::Distill(args) => commands::distill::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::VerifyTheory(args) => commands::verify_theory::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
