//! Inference commands: embedding export as JSON lines and top-k headword
//! prediction for a single sentence.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use clap::Args;
use defsent::eval::report::text_table;
use defsent::train::load_checkpoint;
use defsent::{PoolingStrategy, Tensor};
use serde::Serialize;

use crate::error::CliError;
use crate::files::{read_lines, write_text};

/// Flags for the encode command.
#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Checkpoint that provides the encoder.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Sentences to encode, one per line; standard input when absent.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Where to write the JSON lines; standard output when absent.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Pooling strategy: cls, mean, or max; the checkpoint's own when absent.
    #[arg(long)]
    pub pooling: Option<PoolingStrategy>,
}

#[derive(Serialize)]
struct EmbeddingRecord<'a> {
    sentence: &'a str,
    vector: &'a [f32],
}

/// Encodes each input line to one `{sentence, vector}` JSON object. Blank
/// lines still produce a vector: the encoder sees the sentence frame alone.
pub fn encode(args: EncodeArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = checkpoint.to_model()?;
    let pooling = args.pooling.unwrap_or(checkpoint.provenance.pooling);
    let lines = match &args.input {
        Some(path) => read_lines(path)?,
        None => io::stdin()
            .lock()
            .lines()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| CliError::Read {
                path: PathBuf::from("<stdin>"),
                source,
            })?,
    };

    let mut rendered = String::new();
    for sentence in &lines {
        let vector = model.embed_sentence(&checkpoint.vocab, sentence, pooling)?;
        let record = serde_json::to_string(&EmbeddingRecord {
            sentence,
            vector: &vector,
        })
        .map_err(|err| CliError::Config {
            detail: format!("cannot serialize embedding: {err}"),
        })?;
        rendered.push_str(&record);
        rendered.push('\n');
    }
    match &args.output {
        Some(path) => write_text(path, &rendered)?,
        None => io::stdout()
            .lock()
            .write_all(rendered.as_bytes())
            .map_err(|source| CliError::Write {
                path: PathBuf::from("<stdout>"),
                source,
            })?,
    }
    Ok(())
}

/// Flags for the predict-word command.
#[derive(Debug, Args)]
pub struct PredictWordArgs {
    /// Checkpoint that provides the encoder and prediction head.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Sentence whose embedding is pushed through the prediction head.
    #[arg(long, value_name = "TEXT")]
    pub sentence: String,
    /// How many top-ranked words to show.
    #[arg(long = "top", value_name = "K", default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub top: u64,
    /// Pooling strategy: cls, mean, or max; the checkpoint's own when absent.
    #[arg(long)]
    pub pooling: Option<PoolingStrategy>,
}

/// Prints the vocabulary words the prediction head considers most likely
/// for the sentence, probabilities to four decimals, best first.
pub fn predict_word(args: PredictWordArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = checkpoint.to_model()?;
    let pooling = args.pooling.unwrap_or(checkpoint.provenance.pooling);
    let vocab_size = checkpoint.vocab.size();
    let mut k = args.top as usize;
    if k > vocab_size {
        eprintln!(
            "warning: --top {k} exceeds the vocabulary size {vocab_size}; showing all {vocab_size} words"
        );
        k = vocab_size;
    }

    let embedding = model.embed_sentence(&checkpoint.vocab, &args.sentence, pooling)?;
    let width = embedding.len();
    let pooled = Tensor::new(vec![1, width], embedding)?;
    let (_, distribution) = model.predict_word(&pooled)?;

    let rows: Vec<Vec<String>> = distribution
        .top_k(0, k)
        .into_iter()
        .enumerate()
        .map(|(rank, (word_id, probability))| {
            let word = checkpoint
                .vocab
                .token(word_id as u32)
                .unwrap_or("<unknown>")
                .to_string();
            vec![(rank + 1).to_string(), word, format!("{probability:.4}")]
        })
        .collect();
    print!("{}", text_table(&["rank", "word", "probability"], &rows));
    Ok(())
}
