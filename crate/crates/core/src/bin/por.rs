use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "por", about = "Proof-of-response simulator")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario, write its trace and print the ledger summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "horizon-ms")]
        horizon_ms: Option<u64>,
    },
    /// Compare a scenario's rendered timeline with a golden file.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        golden: PathBuf,
    },
    /// Randomized invariant sweeps.
    Properties {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        iterations: u64,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let code = match args.cmd {
        Cmd::Run {
            scenario,
            out,
            horizon_ms,
        } => por::cli::cmd_run(
            &scenario,
            out.as_deref(),
            horizon_ms,
            &mut stdout,
            &mut stderr,
        ),
        Cmd::Check { scenario, golden } => {
            por::cli::cmd_check(&scenario, &golden, &mut stdout, &mut stderr)
        }
        Cmd::Properties { seed, iterations } => {
            por::cli::cmd_properties(seed, iterations, &mut stdout, &mut stderr)
        }
    };
    ExitCode::from(code)
}
