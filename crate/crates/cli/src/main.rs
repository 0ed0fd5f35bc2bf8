use std::path::PathBuf;
use std::process::ExitCode;

use cfse_cli::{execute, CliError, Command, Run};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cfse", version, about = "Entropy experiments on discrete causal fermion systems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "CFSE_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Build the static vacuum and write it as JSON.
    Vacuum,
    /// Entropy report for each configured beta.
    Entropy,
    /// Beta, thickness or subgroup sweep as CSV.
    Sweep,
    /// Entanglement entropy of a region.
    Entangle,
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let run = Run::from_text(&text, cli.seed, cli.out)?;
    let command = match cli.command {
        Cmd::Vacuum => Command::Vacuum,
        Cmd::Entropy => Command::Entropy,
        Cmd::Sweep => Command::Sweep,
        Cmd::Entangle => Command::Entangle,
    };
    execute(command, &run)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
