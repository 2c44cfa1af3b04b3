use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weaklearn::cli::{exit_code, run_file, Command, RunOptions};

#[derive(Parser)]
#[command(name = "weaklearn", version, about = "Population-level weak-learnability and identifiability checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Halfspace search plus explicit indicator network; passes when the network beats Var(Y).
    VerifyTheorem1(Common),
    /// Hypothesis audits plus adversarial target; passes when θ0 is the empirical argmin.
    VerifyTheorem2(Common),
    /// Fisher matrix, strong-identifiability probe, Hessian envelope, support size.
    FisherAudit(Common),
    /// Logistic model vs one-layer network on the same adversarial Gaussian population.
    PropositionContrast(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Report path; CSV tables are written next to it. Prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record per-iteration optimizer traces.
    #[arg(long)]
    trace: bool,
    /// Replace every seed in the config.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::VerifyTheorem1(a) => (Command::VerifyTheorem1, a),
        Cmd::VerifyTheorem2(a) => (Command::VerifyTheorem2, a),
        Cmd::FisherAudit(a) => (Command::FisherAudit, a),
        Cmd::PropositionContrast(a) => (Command::PropositionContrast, a),
    };
    let opts = RunOptions { seed_override: args.seed_override, trace: args.trace };
    let result = run_file(command, &args.config, opts);
    let code = exit_code(&result);
    match result {
        Ok(report) => {
            eprint!("{}", report.summary());
            let written = match &args.out {
                Some(path) => report.write(path),
                None => report.to_json().map(|s| print!("{s}")),
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
