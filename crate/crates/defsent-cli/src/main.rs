//! `defsent`: train, evaluate, and query sentence encoders that learn by
//! predicting dictionary headwords from their definitions.
//!
//! The binary exposes seven subcommands: `pretrain`, `finetune`,
//! `eval-wordpred`, `eval-sts`, `eval-cls`, `encode`, and `predict-word`.
//! Runs are driven by a TOML config file mirrored by flags, with flags
//! taking precedence, and every command that takes a seed is bitwise
//! reproducible. Exit codes are part of the contract and documented in
//! [`error`].

mod config;
mod error;
mod evaluate;
mod files;
mod infer;
mod runs;

use std::env;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "defsent",
    version,
    about = "Train and evaluate sentence encoders that predict dictionary headwords from definitions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain a fresh encoder with masked-token prediction.
    Pretrain(runs::PretrainArgs),
    /// Fine-tune a pretrained checkpoint to predict headwords from definitions.
    Finetune(runs::FinetuneArgs),
    /// Rank every dictionary headword from its definition embedding.
    EvalWordpred(evaluate::EvalWordpredArgs),
    /// Correlate embedding cosine similarity with gold sentence-pair scores.
    EvalSts(evaluate::EvalStsArgs),
    /// Probe embeddings with a cross-validated linear classifier.
    EvalCls(evaluate::EvalClsArgs),
    /// Emit one embedding vector per input sentence as JSON lines.
    Encode(infer::EncodeArgs),
    /// Show the words the prediction head ranks highest for a sentence.
    PredictWord(infer::PredictWordArgs),
}

fn main() -> ExitCode {
    ExitCode::from(run() as u8)
}

fn run() -> i32 {
    if let Err(err) = configure_threads() {
        eprintln!("error: {err}");
        return err.exit_code();
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let wants_text = matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if wants_text { 0 } else { 3 };
        }
    };
    let result = match cli.command {
        Command::Pretrain(args) => runs::pretrain(args),
        Command::Finetune(args) => runs::finetune(args),
        Command::EvalWordpred(args) => evaluate::run_wordpred(args),
        Command::EvalSts(args) => evaluate::run_sts(args),
        Command::EvalCls(args) => evaluate::run_cls(args),
        Command::Encode(args) => infer::encode(args),
        Command::PredictWord(args) => infer::predict_word(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

/// Caps the global thread pool when `DEFSENT_THREADS` is set, bounding how
/// many seeds or grid candidates run at once.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = env::var("DEFSENT_THREADS") else {
        return Ok(());
    };
    let threads = value
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config {
            detail: format!("DEFSENT_THREADS must be a positive integer, got '{value}'"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|err| CliError::Config {
            detail: format!("cannot size the thread pool: {err}"),
        })
}
