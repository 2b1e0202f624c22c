//! Train a transformer sentence encoder by predicting a dictionary headword
//! from its definition sentence through a frozen word-prediction layer.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode autodiff on a tape, Adam, and
//!   the warmup learning-rate schedule.
//! - [`data`]: word-level vocabulary, dictionary loading and word-level
//!   splits, batching, masked-token corruption, and evaluation task files.
//! - [`model`]: the transformer encoder, pooling strategies, and the
//!   word-prediction head shared by pretraining and fine-tuning.
//! - [`train`]: the MLM pretraining and definition fine-tuning loops, the
//!   learning-rate grid search, multi-seed aggregation, and checkpoints.
//! - [`eval`]: word-prediction ranking, STS correlation, the fixed
//!   classification probe, and report formatting.

pub mod data;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use data::{DefinitionEntry, SplitCorpus, TokenBatch, Vocab};
pub use model::{EncoderModel, ModelConfig, PoolingStrategy, WordDistribution};
pub use tensor::{Tape, Tensor, Var};
pub use train::{Checkpoint, Phase, Provenance, TrainConfig, TrainReport};
