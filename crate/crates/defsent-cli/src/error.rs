//! One error type for the whole binary, with a stable exit code per cause.
//!
//! The codes are part of the command-line contract:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | success |
//! | 1    | internal failure (numerics, output writes) |
//! | 2    | missing input file |
//! | 3    | configuration error (flags, config file, hyperparameters) |
//! | 4    | insufficient data for the requested run |
//! | 5    | malformed task or dictionary file |
//! | 6    | bad checkpoint |

use std::fmt;
use std::io;
use std::path::PathBuf;

use defsent::data::DataError;
use defsent::eval::EvalError;
use defsent::model::ModelError;
use defsent::tensor::TensorError;
use defsent::train::{CheckpointError, TrainError};

/// Anything a command can fail with, each cause mapped to one exit code.
#[derive(Debug)]
pub enum CliError {
    /// An input file could not be read.
    Read { path: PathBuf, source: io::Error },
    /// An output file could not be written.
    Write { path: PathBuf, source: io::Error },
    /// Flags or the config file do not describe a runnable job.
    Config { detail: String },
    Data(DataError),
    Train(TrainError),
    Checkpoint(CheckpointError),
    Eval(EvalError),
    Model(ModelError),
    Tensor(TensorError),
}

impl CliError {
    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } => 2,
            CliError::Write { .. } => 1,
            CliError::Config { .. } => 3,
            CliError::Data(err) => data_code(err),
            CliError::Train(err) => train_code(err),
            CliError::Checkpoint(err) => checkpoint_code(err),
            CliError::Eval(err) => eval_code(err),
            CliError::Model(err) => model_code(err),
            CliError::Tensor(_) => 1,
        }
    }
}

fn data_code(err: &DataError) -> i32 {
    match err {
        DataError::Io { .. } => 2,
        DataError::EmptyCorpus | DataError::EmptyFile { .. } | DataError::TooFewHeadwords { .. } => 4,
        DataError::MalformedLine { .. } | DataError::InvalidVocab { .. } => 5,
        DataError::VocabTooSmall { .. } => 3,
    }
}

fn train_code(err: &TrainError) -> i32 {
    match err {
        TrainError::InvalidConfig { .. }
        | TrainError::VocabMismatch { .. }
        | TrainError::EmptyGrid
        | TrainError::EmptySeeds => 3,
        TrainError::EmptyCorpus
        | TrainError::EmptyDevSplit
        | TrainError::UnfilteredEntry { .. } => 4,
        TrainError::WrongPhase { .. } => 6,
        TrainError::Model(inner) => model_code(inner),
        TrainError::Eval(inner) => eval_code(inner),
        TrainError::Tensor(_) | TrainError::InconsistentMetrics { .. } => 1,
    }
}

fn checkpoint_code(err: &CheckpointError) -> i32 {
    match err {
        CheckpointError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
        _ => 6,
    }
}

fn eval_code(err: &EvalError) -> i32 {
    match err {
        EvalError::EmptyInput { .. }
        | EvalError::TooFewSamples { .. }
        | EvalError::SingleClass
        | EvalError::ConstantSeries { .. } => 4,
        EvalError::Model(inner) => model_code(inner),
        _ => 1,
    }
}

fn model_code(err: &ModelError) -> i32 {
    match err {
        ModelError::InvalidConfig { .. } => 3,
        _ => 1,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Read { path, source } => {
                write!(f, "cannot read {}: {source}", path.display())
            }
            CliError::Write { path, source } => {
                write!(f, "cannot write {}: {source}", path.display())
            }
            CliError::Config { detail } => write!(f, "{detail}"),
            CliError::Data(err) => err.fmt(f),
            CliError::Train(err) => err.fmt(f),
            CliError::Checkpoint(err) => err.fmt(f),
            CliError::Eval(err) => err.fmt(f),
            CliError::Model(err) => err.fmt(f),
            CliError::Tensor(err) => err.fmt(f),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Read { source, .. } | CliError::Write { source, .. } => Some(source),
            CliError::Config { .. } => None,
            CliError::Data(err) => Some(err),
            CliError::Train(err) => Some(err),
            CliError::Checkpoint(err) => Some(err),
            CliError::Eval(err) => Some(err),
            CliError::Model(err) => Some(err),
            CliError::Tensor(err) => Some(err),
        }
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        CliError::Data(err)
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        CliError::Train(err)
    }
}

impl From<CheckpointError> for CliError {
    fn from(err: CheckpointError) -> Self {
        CliError::Checkpoint(err)
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        CliError::Eval(err)
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        CliError::Model(err)
    }
}

impl From<TensorError> for CliError {
    fn from(err: TensorError) -> Self {
        CliError::Tensor(err)
    }
}
