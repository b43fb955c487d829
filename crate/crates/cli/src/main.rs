use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsift_cli::{run, ExperimentConfig, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fedsift",
    version,
    about = "Federated learning with noisy-sample selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write rounds.csv, removal.csv and summary.json.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Threads for client updates.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let mut cfg = match load(&config) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output.directory = out;
            }
            if workers == 0 {
                eprintln!("error: --workers must be at least 1");
                return ExitCode::from(EXIT_CONFIG);
            }
            match run(&cfg, workers) {
                Ok(result) => {
                    println!(
                        "{} rounds; best accuracy {:.4} at round {}; output in {}",
                        result.reports.len(),
                        result.best.accuracy,
                        result.best.round,
                        cfg.output.directory.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(match e {
                        RunError::Config(_) => EXIT_CONFIG,
                        _ => EXIT_RUNTIME,
                    })
                }
            }
        }
    }
}
