//! `luda`: command-line front end for the adaptation toolkit.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use luda_core::ErrorKind;

#[derive(Parser)]
#[command(name = "luda", version, about = "LiDAR domain adaptation toolkit")]
struct Cli {
    /// JSON config: a pipeline config for `run`, a parameter block otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file for single-artifact commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: commands::Command,
}

/// Process exit status for a run that finished but reported non-convergence.
pub const EXIT_NONCONVERGED: u8 = 4;

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let globals = commands::Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match commands::dispatch(cli.command, &globals) {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged) => ExitCode::from(EXIT_NONCONVERGED),
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
