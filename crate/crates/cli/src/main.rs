mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::BaselineKind;
use config::RunConfig;
use error::{write_err, CliError};

/// Trajectory generation on road networks: synthesize data, train, generate
/// and evaluate.
#[derive(Debug, Parser)]
#[command(name = "hoser", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `paths.output_dir`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a grid city and sample trajectories on it.
    Synth,
    /// Validate, filter and split trajectories; also writes test OD requests.
    Split,
    /// Partition the network into zones and count training flows.
    Partition,
    /// Train the model and write a checkpoint.
    Train,
    /// Generate trajectories for OD requests with a trained model.
    Generate,
    /// Compare generated trajectories against the test set.
    Evaluate,
    /// Generate trajectories with a reference method.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Split => "split",
            Command::Partition => "partition",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Evaluate => "evaluate",
            Command::Baseline { .. } => "baseline",
        }
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.paths.output_dir = Some(dir.clone());
    }
    cfg.validate()?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
    let echo = dir.join(format!("{}.config.toml", cli.command.name()));
    std::fs::write(&echo, toml::to_string(&cfg.resolved()).expect("serializable config")).map_err(|e| write_err(&echo, e))?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Split => commands::split(&cfg),
        Command::Partition => commands::partition(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Generate => commands::generate(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Baseline { kind } => commands::baseline(&cfg, *kind),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            e.exit_code()
        }
    }
}
