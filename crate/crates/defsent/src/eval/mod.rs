//! Evaluation battery: word-prediction ranking, semantic similarity
//! correlation, and a logistic-regression probe over frozen embeddings.
//!
//! Everything here is read-only with respect to the model. Ranking uses
//! competition ranks (1 plus the number of strictly greater scores), so
//! metrics are rank-preserving under softmax and can be computed from
//! logits or probabilities interchangeably. Similarity correlation is
//! Spearman's rho on average ranks, which stays defined when gold scores
//! tie. The probe trains its own tiny classifier with a fixed iteration
//! budget so results never depend on an external solver.

mod probe;
mod rank;
pub mod report;
mod similarity;

pub use probe::{probe_classifier, ProbeReport};
pub use rank::{eval_word_prediction, rank_metrics, rank_of_target, RankReport};
pub use similarity::{cosine_similarity, eval_sts, spearman_rho, STSReport};

use std::error::Error;
use std::fmt;

use crate::model::ModelError;

/// Errors from metric computation and evaluation runs.
#[derive(Debug)]
pub enum EvalError {
    /// An input collection that must be non-empty is empty.
    EmptyInput { what: &'static str },
    /// Fewer data points than the computation can work with.
    TooFewSamples {
        what: &'static str,
        found: usize,
        required: usize,
    },
    /// Paired series of different lengths.
    LengthMismatch { left: usize, right: usize },
    /// A rank target beyond the score vector.
    TargetOutOfRange { target: usize, size: usize },
    /// Cosine similarity of a zero vector is undefined.
    ZeroVector,
    /// A value that must be finite is NaN or infinite.
    NonFinite { what: &'static str },
    /// Rank correlation of a constant series is undefined.
    ConstantSeries { which: &'static str },
    /// The probe needs at least two distinct classes.
    SingleClass,
    /// Embedding or prediction failed inside the model.
    Model(ModelError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyInput { what } => write!(f, "{what} is empty"),
            EvalError::TooFewSamples {
                what,
                found,
                required,
            } => write!(f, "{what} has {found} samples, needs at least {required}"),
            EvalError::LengthMismatch { left, right } => {
                write!(f, "paired series have lengths {left} and {right}")
            }
            EvalError::TargetOutOfRange { target, size } => {
                write!(f, "target {target} outside score vector of length {size}")
            }
            EvalError::ZeroVector => write!(f, "cosine similarity of a zero vector is undefined"),
            EvalError::NonFinite { what } => write!(f, "{what} contains a non-finite value"),
            EvalError::ConstantSeries { which } => {
                write!(f, "rank correlation undefined: {which} series is constant")
            }
            EvalError::SingleClass => write!(f, "classification probe needs at least two classes"),
            EvalError::Model(e) => write!(f, "model evaluation failed: {e}"),
        }
    }
}

impl Error for EvalError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            EvalError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(e)
    }
}
