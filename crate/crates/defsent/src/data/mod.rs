//! Text ingestion: vocabulary, tokenization, dictionary corpora, word-level
//! splits, masked-token corruption, padded batching, and evaluation task
//! files.
//!
//! The tokenizer is deliberately word-level (lowercase, split on anything
//! that is not alphanumeric) rather than a subword scheme: one token is one
//! headword candidate, which keeps the "headword must be in the vocabulary"
//! condition crisp. All operations are pure given their inputs and seed.

mod batch;
mod dictionary;
mod task;
mod vocab;

pub use batch::{make_definition_batches, make_sentence_batches, mlm_mask, TokenBatch, NO_LABEL};
pub use dictionary::{filter_oov, load_dictionary, split_by_word, DefinitionEntry, SplitCorpus};
pub use task::{load_classification_file, load_sts_file, LabeledSentence, STSPair};
pub use vocab::{build_vocab, tokenize, word_tokens, Vocab};

use std::fmt;
use std::io;
use std::path::PathBuf;

/// Errors from corpus ingestion and vocabulary construction.
#[derive(Debug)]
pub enum DataError {
    /// Filesystem failure, tagged with the offending path.
    Io { path: PathBuf, source: io::Error },
    /// A corpus yielded no tokens at all.
    EmptyCorpus,
    /// A data file contained no usable entries.
    EmptyFile { path: PathBuf },
    /// A line does not conform to the expected format.
    MalformedLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    /// Vocabulary budget cannot even hold the special tokens.
    VocabTooSmall { max_size: usize },
    /// The vocabulary token list violates a structural invariant.
    InvalidVocab { detail: String },
    /// Too few distinct headwords to split into train/dev/test.
    TooFewHeadwords { found: usize, required: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
            DataError::EmptyCorpus => write!(f, "corpus contains no tokens"),
            DataError::EmptyFile { path } => {
                write!(f, "{}: no usable entries", path.display())
            }
            DataError::MalformedLine { path, line, detail } => {
                write!(f, "{}:{line}: {detail}", path.display())
            }
            DataError::VocabTooSmall { max_size } => {
                write!(
                    f,
                    "vocabulary size limit {max_size} cannot hold the 5 special tokens"
                )
            }
            DataError::InvalidVocab { detail } => write!(f, "invalid vocabulary: {detail}"),
            DataError::TooFewHeadwords { found, required } => {
                write!(
                    f,
                    "need at least {required} distinct headwords to split, found {found}"
                )
            }
        }
    }
}

impl std::error::Error for DataError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            DataError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
