//! `reflect-pipe`: command-line front end for the comment-edit prediction
//! and post-update pipeline.
//!
//! Exit code 0 on success; on failure a machine-readable error JSON is
//! printed to stderr and the exit code is nonzero.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use reflect_core::pipeline::{
    cmd_apu, cmd_evaluate, cmd_index, cmd_ingest, cmd_interpret, cmd_predict, cmd_report,
    cmd_train_lr, Mode, PipelineConfig, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "reflect-pipe",
    about = "Retrieval-augmented reasoning and reflection pipeline for comment-driven code maintenance",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate, and canonicalize a corpus; write stats.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed the training split and build the vector index.
    Index {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive the validation ruleset from the knowledge base (one-time).
    Interpret {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the feature-based logistic-regression baseline.
    TrainLr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict validity for the evaluation split with one technique.
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// zero-shot | few-shot | few-shot-cot | tang | features-lr |
        /// rag-only | reflect-only | rag-reflect
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a prediction file against the corpus labels.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Prediction file produced by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and score post updates for Valid-predicted pairs.
    Apu {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Also report the pooled corpus-counts BLEU variant.
        #[arg(long)]
        corpus_bleu: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collate all evaluations in a run directory into one report.
    Report {
        /// Run directory holding eval-*.json files.
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<PipelineConfig, PipelineError> {
    let mut config = PipelineConfig::load(path)?;
    if let Some(out) = out {
        config.output_dir = out;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest { config, out } => {
            let config = load_config(&config, out)?;
            let stats = cmd_ingest(&config)?;
            println!(
                "ingested {} pairs ({} valid, {} invalid, {} unlabeled) -> {}",
                stats.total,
                stats.valid,
                stats.invalid,
                stats.unlabeled,
                config.output_dir.display()
            );
        }
        Command::Index { config, out } => {
            let config = load_config(&config, out)?;
            let path = cmd_index(&config)?;
            println!("index written to {}", path.display());
        }
        Command::Interpret { config, out } => {
            let config = load_config(&config, out)?;
            let path = cmd_interpret(&config)?;
            println!("ruleset written to {}", path.display());
        }
        Command::TrainLr { config, out } => {
            let config = load_config(&config, out)?;
            let path = cmd_train_lr(&config)?;
            println!("model written to {}", path.display());
        }
        Command::Predict { config, mode, out } => {
            let config = load_config(&config, out)?;
            let output = cmd_predict(&config, mode)?;
            println!(
                "predicted {} pairs ({} quarantined) -> {}",
                output.records.len(),
                output.quarantined.len(),
                output.predictions_path.display()
            );
        }
        Command::Evaluate { config, predictions, out } => {
            let config = load_config(&config, out)?;
            let report = cmd_evaluate(&config, &predictions)?;
            println!(
                "{}: valid P {:.4} R {:.4} F1 {:.4} | invalid P {:.4} R {:.4} F1 {:.4}",
                report.mode,
                report.valid.precision,
                report.valid.recall,
                report.valid.f1,
                report.invalid.precision,
                report.invalid.recall,
                report.invalid.f1,
            );
        }
        Command::Apu { config, predictions, corpus_bleu, out } => {
            let config = load_config(&config, out)?;
            let score = cmd_apu(&config, &predictions, corpus_bleu)?;
            println!(
                "apu over {} pairs: exact match {:.4}, bleu4 {:.4}",
                score.records.len(),
                score.em_rate,
                score.bleu4
            );
        }
        Command::Report { run_dir } => {
            let path = cmd_report(&run_dir)?;
            println!("report written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": {
                    "kind": err.kind(),
                    "message": err.to_string(),
                }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
