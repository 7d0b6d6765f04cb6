use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reactor_grid_cli::{commands, RunConfig};

#[derive(Parser)]
#[command(name = "reactor-grid", version, about = "Grid-structured surrogates of a poisoned fixed-bed reactor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training cycle and the test scenarios.
    Simulate(Common),
    /// Train one variant over the configured seeds and select the best run.
    Train(Common),
    /// Score selected checkpoints on the training and test cycles.
    Evaluate(Common),
    /// Export reconstructed state fields and ΔT plot data.
    Reconstruct(Common),
    /// Export responses to changed inlet conditions.
    Sensitivity(Common),
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and REACTOR_GRID_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed for simulation and training.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&Common, fn(&RunConfig) -> reactor_grid_cli::Result<Vec<PathBuf>>) = match &cli.command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::Train(a) => (a, commands::train),
        Command::Evaluate(a) => (a, commands::evaluate),
        Command::Reconstruct(a) => (a, commands::reconstruct),
        Command::Sensitivity(a) => (a, commands::sensitivity),
    };
    let result = RunConfig::load(&args.config)
        .map(|c| c.with_overrides(args.out.clone(), args.seed))
        .and_then(|c| run(&c));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
