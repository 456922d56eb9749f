//! `cronos` binary. Exit codes: 0 success, 1 runtime failure, 2 invalid
//! configuration or usage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cronos_cli::config::{Overrides, SyntheticKind};
use cronos_cli::run;

#[derive(Parser)]
#[command(name = "cronos", about = "Convex two-layer network training", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, summary, and checkpoint.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a saved checkpoint against a dataset; prints a JSON report.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint written by a train run.
        #[arg(long)]
        checkpoint: PathBuf,
        /// stats.json from the training run, for consistent standardization.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Generate a synthetic dataset in the raw binary format.
    GenData {
        #[command(flatten)]
        overrides: Overrides,
        /// Generator: blobs or planted-relu.
        #[arg(long)]
        kind: Option<SyntheticKind>,
        /// Number of rows.
        #[arg(long)]
        n: Option<usize>,
        /// Number of features.
        #[arg(long)]
        d: Option<usize>,
        /// Noise level.
        #[arg(long, allow_negative_numbers = true)]
        noise: Option<f64>,
        /// Destination file.
        #[arg(long)]
        dest: PathBuf,
    },
}

fn env_lookup(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { overrides } => {
            let cfg = match overrides.resolve(&env_lookup) {
                Ok(cfg) => cfg,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match run::train(&cfg) {
                Ok(summary) => {
                    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::Eval { overrides, checkpoint, stats } => {
            let cfg = match overrides.resolve(&env_lookup) {
                Ok(cfg) => cfg,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match run::eval(&cfg, &checkpoint, stats.as_deref()) {
                Ok(report) => {
                    println!("{}", serde_json::to_string(&report).expect("report serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::GenData { overrides, kind, n, d, noise, dest } => {
            let cfg = match overrides.resolve(&env_lookup) {
                Ok(mut cfg) => {
                    if let Some(kind) = kind {
                        cfg.data.kind = kind;
                    }
                    if let Some(n) = n {
                        cfg.data.n = n;
                    }
                    if let Some(d) = d {
                        cfg.data.d = d;
                    }
                    if let Some(noise) = noise {
                        cfg.data.noise = noise;
                    }
                    if let Err(e) = cfg.validate() {
                        return fail(EXIT_CONFIG, e);
                    }
                    cfg
                }
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match run::gen_data(&cfg, &dest) {
                Ok(rows) => {
                    eprintln!("wrote {rows} rows to {}", dest.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
    }
}
