use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coop_irl_cli::{cmd_eval, cmd_gen_experts, cmd_inspect, cmd_train, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "coop-irl", about = "Reward learning from planner demonstrations")]
struct Cli {
    /// Worker threads for parallel episode generation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstration batches with the baseline reward model.
    GenExperts {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the reward model; resumes from the latest checkpoint if present.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint against the expert sets.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Pretty-print a trajectory batch file.
    Inspect {
        /// Scenario file the batch was generated from.
        #[arg(long)]
        scenario: PathBuf,
        file: PathBuf,
    },
}

fn load(config: &PathBuf, cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenExperts { config } => cmd_gen_experts(&load(config, cli)?),
        Command::Train { config } => cmd_train(&load(config, cli)?).map(|_| ()),
        Command::Eval { config, checkpoint, baseline } => {
            cmd_eval(&load(config, cli)?, checkpoint, baseline.as_deref()).map(|_| ())
        }
        Command::Inspect { scenario, file } => {
            cmd_inspect(file, scenario, &mut std::io::stdout())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
