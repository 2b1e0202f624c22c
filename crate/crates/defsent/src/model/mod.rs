//! Transformer sentence encoder with a tied word-prediction head.
//!
//! [`EncoderModel`] owns a flat, name-keyed parameter store: token and
//! position embeddings, a stack of self-attention blocks, and a prediction
//! head (dense transform, GELU, layer norm, then a decoder that shares the
//! token embedding matrix when weight tying is on). Sentences are encoded,
//! reduced to a single vector by a [`PoolingStrategy`], and pushed through
//! the head to score every vocabulary word.
//!
//! Each parameter carries a trainable flag. Freezing the prediction head
//! flips those flags off, after which no gradient is ever accumulated for
//! the head, and with tying enabled that includes the token embeddings.
//! Forward passes are built on a fresh [`crate::tensor::Tape`] per call; see
//! [`forward::ForwardPass`] for graph construction.

mod forward;

pub use forward::ForwardPass;

use std::collections::BTreeMap;
use std::error::Error;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Vocab};
use crate::rng::seeded_rng;
use crate::tensor::{Scalar, Tensor, TensorError};

/// Standard deviation of the truncated-free normal initializer.
const INIT_STD: f64 = 0.02;

/// Epsilon inside every layer-norm variance denominator.
pub(crate) const LAYER_NORM_EPS: f64 = 1e-12;

/// Errors from model construction and forward passes.
#[derive(Debug)]
pub enum ModelError {
    /// A configuration field violates its constraints.
    InvalidConfig { detail: String },
    /// A batch carries a token id outside the embedding table.
    TokenIdOutOfRange { id: u32, vocab_size: usize },
    /// A batch is wider than the position embedding table.
    SequenceTooLong { len: usize, max_len: usize },
    /// Pooling found a row with no positions to pool over.
    EmptyPoolRow { row: usize },
    /// An input's width does not match what the operation expects.
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// A loss was requested on a batch without target word ids.
    MissingTargets,
    /// An underlying tensor operation failed.
    Tensor(TensorError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig { detail } => write!(f, "invalid model config: {detail}"),
            ModelError::TokenIdOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} outside vocabulary of size {vocab_size}")
            }
            ModelError::SequenceTooLong { len, max_len } => {
                write!(f, "sequence length {len} exceeds max_len {max_len}")
            }
            ModelError::EmptyPoolRow { row } => {
                write!(f, "row {row} has no positions left to pool over")
            }
            ModelError::DimensionMismatch { op, expected, got } => {
                write!(f, "{op}: expected width {expected}, got {got}")
            }
            ModelError::MissingTargets => write!(f, "batch carries no target word ids"),
            ModelError::Tensor(e) => write!(f, "tensor operation failed: {e}"),
        }
    }
}

impl Error for ModelError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            ModelError::Tensor(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

/// Architecture hyperparameters.
///
/// The defaults are a desk-scale model that trains in seconds on a CPU while
/// keeping every structural property of the full-size architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default = "defaults::num_layers")]
    pub num_layers: usize,
    #[serde(default = "defaults::num_heads")]
    pub num_heads: usize,
    #[serde(default = "defaults::d_ff")]
    pub d_ff: usize,
    #[serde(default = "defaults::max_len")]
    pub max_len: usize,
    /// Share the token embedding matrix with the prediction-head decoder.
    #[serde(default = "defaults::tie")]
    pub tie_prediction_weights: bool,
    /// Dropout probability applied in training mode; evaluation never drops.
    #[serde(default = "defaults::dropout")]
    pub dropout_prob: f64,
    /// Leave CLS and SEP out of Mean and Max pooling.
    #[serde(default)]
    pub pool_excludes_specials: bool,
}

mod defaults {
    pub fn vocab_size() -> usize {
        2000
    }
    pub fn d_model() -> usize {
        64
    }
    pub fn num_layers() -> usize {
        4
    }
    pub fn num_heads() -> usize {
        4
    }
    pub fn d_ff() -> usize {
        256
    }
    pub fn max_len() -> usize {
        32
    }
    pub fn tie() -> bool {
        true
    }
    pub fn dropout() -> f64 {
        0.1
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: defaults::vocab_size(),
            d_model: defaults::d_model(),
            num_layers: defaults::num_layers(),
            num_heads: defaults::num_heads(),
            d_ff: defaults::d_ff(),
            max_len: defaults::max_len(),
            tie_prediction_weights: defaults::tie(),
            dropout_prob: defaults::dropout(),
            pool_excludes_specials: false,
        }
    }
}

impl ModelConfig {
    /// Checks every field constraint, returning the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ModelError::InvalidConfig {
                    detail: format!("{name} must be positive"),
                });
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(ModelError::InvalidConfig {
                detail: format!(
                    "d_model {} not divisible by num_heads {}",
                    self.d_model, self.num_heads
                ),
            });
        }
        if self.max_len < 3 {
            return Err(ModelError::InvalidConfig {
                detail: format!("max_len {} cannot hold CLS, a token, and SEP", self.max_len),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(ModelError::InvalidConfig {
                detail: format!("dropout_prob {} outside [0, 1)", self.dropout_prob),
            });
        }
        Ok(())
    }

    /// Width of one attention head.
    pub fn d_head(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// How a sequence of contextual embeddings becomes one sentence vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingStrategy {
    /// Take the embedding at the CLS position.
    Cls,
    /// Average the embeddings of all unpadded positions.
    Mean,
    /// Per-dimension maximum over all unpadded positions.
    Max,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] =
        [PoolingStrategy::Cls, PoolingStrategy::Mean, PoolingStrategy::Max];
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PoolingStrategy::Cls => "cls",
            PoolingStrategy::Mean => "mean",
            PoolingStrategy::Max => "max",
        };
        f.write_str(name)
    }
}

impl FromStr for PoolingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(PoolingStrategy::Cls),
            "mean" => Ok(PoolingStrategy::Mean),
            "max" => Ok(PoolingStrategy::Max),
            other => Err(format!("unknown pooling strategy '{other}'")),
        }
    }
}

/// Per-row probability distributions over the vocabulary.
#[derive(Debug, Clone)]
pub struct WordDistribution<T: Scalar = f32> {
    probs: Tensor<T>,
}

impl<T: Scalar> WordDistribution<T> {
    /// Wraps a `rows × vocab_size` probability tensor, rejecting rows that
    /// are negative anywhere or whose mass strays from 1 by more than 1e-5.
    pub fn new(probs: Tensor<T>) -> Result<Self, ModelError> {
        for r in 0..probs.rows() {
            let row = probs.row(r);
            let mut total = 0.0f64;
            for &p in row {
                if p < T::zero() {
                    return Err(ModelError::InvalidConfig {
                        detail: format!("negative probability in row {r}"),
                    });
                }
                total += p.to_f64();
            }
            if (total - 1.0).abs() > 1e-5 {
                return Err(ModelError::InvalidConfig {
                    detail: format!("row {r} probabilities sum to {total}, not 1"),
                });
            }
        }
        Ok(WordDistribution { probs })
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.cols()
    }

    /// Probabilities for one input row.
    pub fn row(&self, r: usize) -> &[T] {
        self.probs.row(r)
    }

    /// The `k` most probable word ids for one row, highest first, ties
    /// broken toward the smaller id.
    pub fn top_k(&self, r: usize, k: usize) -> Vec<(usize, T)> {
        let mut ranked: Vec<(usize, T)> = self.row(r).iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }

    pub fn into_inner(self) -> Tensor<T> {
        self.probs
    }
}

/// The encoder, its prediction head, and their trainable flags.
#[derive(Debug, Clone)]
pub struct EncoderModel<T: Scalar = f32> {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> EncoderModel<T> {
    /// Builds a freshly initialized model: weight matrices and embeddings
    /// drawn from a seeded normal with standard deviation 0.02, biases zero,
    /// layer-norm gains one. Every parameter starts trainable.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("finite std");
        let mut params = BTreeMap::new();
        for (name, shape) in expected_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init_kind(&name) {
                InitKind::Normal => (0..n)
                    .map(|_| T::from_f64(normal.sample(&mut rng)))
                    .collect(),
                InitKind::Zero => vec![T::zero(); n],
                InitKind::One => vec![T::one(); n],
            };
            let tensor = Tensor::new(shape, data)?.with_requires_grad(true);
            params.insert(name, tensor);
        }
        Ok(EncoderModel { config, params })
    }

    /// Reassembles a model from stored parameters, checking that the names
    /// and shapes are exactly those the configuration calls for.
    pub fn from_parts(
        config: ModelConfig,
        params: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = expected_shapes(&config);
        for (name, shape) in &expected {
            match params.get(name) {
                None => {
                    return Err(ModelError::InvalidConfig {
                        detail: format!("missing parameter '{name}'"),
                    })
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::InvalidConfig {
                        detail: format!(
                            "parameter '{name}' has shape {:?}, expected {:?}",
                            t.shape(),
                            shape
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| !expected.contains_key(*k)) {
            return Err(ModelError::InvalidConfig {
                detail: format!("unexpected parameter '{extra}'"),
            });
        }
        Ok(EncoderModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// All parameters keyed by name; iteration order is the name order.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    /// Mutable parameter access for optimizer steps. Callers must preserve
    /// every tensor's shape.
    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    /// Total number of stored scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Marks the whole word-prediction path as untrainable: the transform,
    /// its layer norm, the decoder, and the output bias. With tied weights
    /// the decoder is the token embedding matrix, so that freezes too.
    pub fn freeze_prediction_head(&mut self) {
        let tied = self.config.tie_prediction_weights;
        for (name, tensor) in self.params.iter_mut() {
            if name.starts_with("head.") || (tied && name == "token_embedding") {
                tensor.set_requires_grad(false);
            }
        }
    }

    /// Names of the parameters that still accept gradients.
    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Starts an evaluation-mode forward pass: no dropout, deterministic.
    pub fn forward(&self) -> ForwardPass<'_, T> {
        ForwardPass::new(self, None)
    }

    /// Starts a training-mode forward pass; `dropout_seed` drives which
    /// activations are dropped.
    pub fn forward_train(&self, dropout_seed: u64) -> ForwardPass<'_, T> {
        ForwardPass::new(self, Some(seeded_rng(dropout_seed)))
    }

    /// Scores every vocabulary word for each pooled sentence vector in `u`
    /// (`rows × d_model`), returning raw logits and the softmax distribution.
    pub fn predict_word(&self, u: &Tensor<T>) -> Result<(Tensor<T>, WordDistribution<T>), ModelError> {
        let mut pass = self.forward();
        let uv = pass.tape_mut().constant(u);
        let logits = pass.predict_logits(uv)?;
        let probs = pass.tape_mut().softmax(logits, 1)?;
        let logits_t = pass.tape().value(logits).clone();
        let probs_t = pass.tape().value(probs).clone();
        Ok((logits_t, WordDistribution::new(probs_t)?))
    }

    /// Encodes and pools a whole batch in evaluation mode, one sentence
    /// vector per row.
    pub fn embed_batch(
        &self,
        batch: &crate::data::TokenBatch,
        strategy: PoolingStrategy,
    ) -> Result<Tensor<T>, ModelError> {
        let mut pass = self.forward();
        let encoded = pass.encode(batch)?;
        let pooled = pass.pool(encoded, batch, strategy)?;
        Ok(pass.tape().value(pooled).clone())
    }

    /// Tokenizes one sentence and returns its pooled embedding, evaluation
    /// mode, deterministic for a fixed model.
    pub fn embed_sentence(
        &self,
        vocab: &Vocab,
        sentence: &str,
        strategy: PoolingStrategy,
    ) -> Result<Vec<T>, ModelError> {
        let ids = tokenize(sentence, vocab, self.config.max_len);
        let batch = crate::data::TokenBatch::from_rows(&[ids], None);
        let pooled = self.embed_batch(&batch, strategy)?;
        Ok(pooled.data().to_vec())
    }

    /// Casts every parameter to another scalar type, keeping trainable
    /// flags. Gradient checks rebuild the model in f64 this way.
    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        let params = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.cast::<U>()))
            .collect();
        EncoderModel {
            config: self.config.clone(),
            params,
        }
    }
}

enum InitKind {
    Normal,
    Zero,
    One,
}

/// Classifies a parameter name by its final path segment: weight matrices
/// and embeddings draw from the initializer normal, gains start at one, and
/// every bias starts at zero.
fn init_kind(name: &str) -> InitKind {
    let last = name.rsplit('.').next().unwrap_or(name);
    if last == "gain" {
        InitKind::One
    } else if last.starts_with('w') || last == "decoder" || last.ends_with("embedding") {
        InitKind::Normal
    } else {
        InitKind::Zero
    }
}

/// The full parameter manifest for a configuration: name to shape. The
/// decoder matrix appears only when weights are untied; otherwise the token
/// embedding matrix is the decoder.
pub(crate) fn expected_shapes(config: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = config.d_model;
    let v = config.vocab_size;
    let mut shapes = BTreeMap::new();
    shapes.insert("token_embedding".to_string(), vec![v, d]);
    shapes.insert("position_embedding".to_string(), vec![config.max_len, d]);
    for i in 0..config.num_layers {
        for proj in ["wq", "wk", "wv", "wo"] {
            shapes.insert(format!("encoder.{i}.attn.{proj}"), vec![d, d]);
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            shapes.insert(format!("encoder.{i}.attn.{bias}"), vec![d]);
        }
        for ln in ["ln1", "ln2"] {
            shapes.insert(format!("encoder.{i}.{ln}.gain"), vec![d]);
            shapes.insert(format!("encoder.{i}.{ln}.bias"), vec![d]);
        }
        shapes.insert(format!("encoder.{i}.ff.w1"), vec![d, config.d_ff]);
        shapes.insert(format!("encoder.{i}.ff.b1"), vec![config.d_ff]);
        shapes.insert(format!("encoder.{i}.ff.w2"), vec![config.d_ff, d]);
        shapes.insert(format!("encoder.{i}.ff.b2"), vec![d]);
    }
    shapes.insert("head.transform.w".to_string(), vec![d, d]);
    shapes.insert("head.transform.b".to_string(), vec![d]);
    shapes.insert("head.ln.gain".to_string(), vec![d]);
    shapes.insert("head.ln.bias".to_string(), vec![d]);
    if !config.tie_prediction_weights {
        shapes.insert("head.decoder".to_string(), vec![v, d]);
    }
    shapes.insert("head.bias".to_string(), vec![v]);
    shapes
}
