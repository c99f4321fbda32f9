use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oulab::experiment::{error_exit_code, run, Command, ExperimentConfig, Status};
use oulab::model::catalog;
use oulab::rng::seed_stream;

#[derive(Parser)]
#[command(name = "oulab", version, about = "Non-autonomous Ornstein-Uhlenbeck verification suite")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Run one check family, or `report-all`, from a TOML config.
    Run {
        /// evolve | covariance | invariance | diffcheck | logsob | hyper | spde | ergodic | report-all
        #[arg(value_parser = parse_command)]
        command: Command,
        config: PathBuf,
        /// Override the config's worker count (results do not depend on it).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the default constant diagonal config.
    DefaultConfig,
    /// List the model catalog.
    Catalog,
    /// Print draws of a counter-based substream.
    SeedStream {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

fn parse_command(s: &str) -> Result<Command, String> {
    s.parse().map_err(|e: oulab::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.action {
        Action::Run { command, config, workers } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(error_exit_code(&e) as u8);
                }
            };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            match run(command, &cfg) {
                Ok(outcome) => {
                    for c in &outcome.report.checks {
                        let status = match c.status {
                            Status::Pass => "PASS",
                            Status::Fail => "FAIL",
                            Status::Report => "REPORT",
                        };
                        println!("{status:<6} {:<12} {}", c.command, c.name);
                        if c.status != Status::Pass {
                            for row in &c.failing_rows {
                                println!("         {row}");
                            }
                        }
                    }
                    println!("artifacts in {}", outcome.output_dir.display());
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(error_exit_code(&e) as u8)
                }
            }
        }
        Action::DefaultConfig => match ExperimentConfig::dc_default().to_toml() {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Action::Catalog => {
            for entry in catalog() {
                println!("{:<16} {}", entry.name, entry.doc);
            }
            ExitCode::SUCCESS
        }
        Action::SeedStream { seed, label, index, count } => {
            let mut rng = seed_stream(seed, &label).substream(index).rng();
            for _ in 0..count {
                println!("{}", rng.next_u64());
            }
            ExitCode::SUCCESS
        }
    }
}
