use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lqr_rpi::cli::{self, Mode, RunOptions};

#[derive(Parser)]
#[command(name = "lqr-rpi", version, about = "Policy iteration experiments for continuous-time LQR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the algebraic Riccati equation.
    SolveAre(RunArgs),
    /// Exact policy iteration.
    PiExact(RunArgs),
    /// Policy iteration with injected errors on G.
    PiRobust(RunArgs),
    /// Off-policy data-driven policy iteration.
    PiData(RunArgs),
    /// Four-cell near/far gain and small/large disturbance experiment.
    Fig1(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output path prefix.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::SolveAre(a) => (Mode::Are, a),
        Command::PiExact(a) => (Mode::PiExact, a),
        Command::PiRobust(a) => (Mode::PiRobust, a),
        Command::PiData(a) => (Mode::PiData, a),
        Command::Fig1(a) => (Mode::Fig1, a),
    };
    let opts = RunOptions {
        out: args.out,
        seed: args.seed,
    };
    let code = cli::run(mode, &args.config, &opts);
    ExitCode::from(code as u8)
}
