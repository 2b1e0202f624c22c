//! Training loops and run orchestration: masked-token pretraining that
//! produces the word-prediction head, definition fine-tuning with that head
//! frozen, learning-rate grid search scored by dev MRR, multi-seed
//! aggregation, and checkpoint persistence.
//!
//! Both loops share one rhythm: shuffle with a per-epoch sub-seed, batch,
//! and take one Adam step per batch under a linear-warmup schedule, logging
//! every step. All randomness flows from `TrainConfig::seed` through named
//! sub-seeds, so a fixed (data, config) pair reproduces its checkpoint
//! bitwise.

use std::collections::BTreeMap;
use std::error::Error;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    filter_oov, make_definition_batches, make_sentence_batches, mlm_mask, DefinitionEntry,
    SplitCorpus, TokenBatch, Vocab, NO_LABEL,
};
use crate::eval::report::MetricSummary;
use crate::eval::{eval_word_prediction, EvalError};
use crate::model::{
    EncoderModel, ForwardPass, ModelConfig, ModelError, PoolingStrategy,
};
use crate::rng::{sub_seed, sub_seed_indexed};
use crate::tensor::{
    adam_step, clip_grad_norm, lr_at, AdamState, Decay, LrSchedule, Scalar, TensorError, Var,
};

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, MAGIC};

/// Errors from training runs and their orchestration.
#[derive(Debug)]
pub enum TrainError {
    /// A configuration field violates its constraints.
    InvalidConfig { detail: String },
    /// A training corpus has no examples.
    EmptyCorpus,
    /// Grid search needs a dev split to score candidates on.
    EmptyDevSplit,
    /// Grid search was given no candidate learning rates.
    EmptyGrid,
    /// Multi-seed aggregation was given no seeds.
    EmptySeeds,
    /// A checkpoint is in the wrong lifecycle phase for this operation.
    WrongPhase { expected: Phase, got: Phase },
    /// A fine-tuning entry is not the output of vocabulary filtering.
    UnfilteredEntry { word: String },
    /// The model config and the vocabulary disagree about size.
    VocabMismatch { config: usize, vocab: usize },
    /// Seeds reported different metric sets, so they cannot be averaged.
    InconsistentMetrics { detail: String },
    /// A model operation failed.
    Model(ModelError),
    /// An underlying tensor operation failed.
    Tensor(TensorError),
    /// An evaluation inside a training pipeline failed.
    Eval(EvalError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig { detail } => write!(f, "invalid train config: {detail}"),
            TrainError::EmptyCorpus => write!(f, "training corpus is empty"),
            TrainError::EmptyDevSplit => write!(f, "dev split is empty"),
            TrainError::EmptyGrid => write!(f, "learning-rate grid is empty"),
            TrainError::EmptySeeds => write!(f, "no seeds to run"),
            TrainError::WrongPhase { expected, got } => {
                write!(f, "expected a {expected} checkpoint, got {got}")
            }
            TrainError::UnfilteredEntry { word } => {
                write!(f, "entry '{word}' has not been vocabulary-filtered")
            }
            TrainError::VocabMismatch { config, vocab } => {
                write!(
                    f,
                    "model config declares {config} tokens but the vocabulary has {vocab}"
                )
            }
            TrainError::InconsistentMetrics { detail } => {
                write!(f, "inconsistent metrics across seeds: {detail}")
            }
            TrainError::Model(e) => write!(f, "model error: {e}"),
            TrainError::Tensor(e) => write!(f, "tensor error: {e}"),
            TrainError::Eval(e) => write!(f, "evaluation error: {e}"),
        }
    }
}

impl Error for TrainError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            TrainError::Model(e) => Some(e),
            TrainError::Tensor(e) => Some(e),
            TrainError::Eval(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e)
    }
}

/// Lifecycle stage of a checkpoint. Fine-tuning consumes `Pretrained`
/// checkpoints and produces `Finetuned` ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrained,
    Finetuned,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Pretrained => write!(f, "pretrained"),
            Phase::Finetuned => write!(f, "finetuned"),
        }
    }
}

/// Where a checkpoint's weights came from: the run's phase, seed, learning
/// rate, pooling strategy, and a fingerprint of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub phase: Phase,
    pub seed: u64,
    pub lr: f64,
    pub pooling: PoolingStrategy,
    pub data_fingerprint: String,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::base_lr")]
    pub base_lr: f64,
    /// Fraction of total optimizer steps spent ramping the learning rate
    /// up linearly; the warmup step count is the floor of this times total.
    #[serde(default = "defaults::warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::pooling")]
    pub pooling: PoolingStrategy,
    /// Keep the word-prediction head (and tied token embeddings) fixed
    /// during fine-tuning.
    #[serde(default = "defaults::freeze_prediction_layer")]
    pub freeze_prediction_layer: bool,
    /// Joint L2 gradient clipping threshold; `None` disables clipping.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// What the learning rate does after warmup.
    #[serde(default)]
    pub decay: Decay,
    /// Per-position corruption probability for masked-token pretraining.
    #[serde(default = "defaults::mlm_mask_prob")]
    pub mlm_mask_prob: f64,
}

mod defaults {
    use crate::model::PoolingStrategy;

    pub fn batch_size() -> usize {
        16
    }
    pub fn epochs() -> usize {
        1
    }
    pub fn base_lr() -> f64 {
        1e-3
    }
    pub fn warmup_fraction() -> f64 {
        0.10
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn pooling() -> PoolingStrategy {
        PoolingStrategy::Cls
    }
    pub fn freeze_prediction_layer() -> bool {
        true
    }
    pub fn mlm_mask_prob() -> f64 {
        0.15
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: defaults::batch_size(),
            epochs: defaults::epochs(),
            base_lr: defaults::base_lr(),
            warmup_fraction: defaults::warmup_fraction(),
            seed: defaults::seed(),
            pooling: defaults::pooling(),
            freeze_prediction_layer: defaults::freeze_prediction_layer(),
            max_grad_norm: None,
            decay: Decay::default(),
            mlm_mask_prob: defaults::mlm_mask_prob(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |detail: String| Err(TrainError::InvalidConfig { detail });
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".to_string());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".to_string());
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if let Some(norm) = self.max_grad_norm {
            if !norm.is_finite() || norm <= 0.0 {
                return fail(format!("max_grad_norm must be positive, got {norm}"));
            }
        }
        if !(self.mlm_mask_prob > 0.0 && self.mlm_mask_prob < 1.0) {
            return fail(format!(
                "mlm_mask_prob must lie in (0, 1), got {}",
                self.mlm_mask_prob
            ));
        }
        Ok(())
    }
}

/// One optimizer step as it happened: its 1-based index, the learning rate
/// applied, and the batch loss.
#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Trace of a training run. Batches that yield no supervised positions are
/// skipped without an entry in `steps`, but still advance the step counter
/// so the schedule stays aligned with `total_steps`.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epoch_mean_loss: Vec<f64>,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

/// Warmup length in optimizer steps: the floor of one warmup fraction's
/// worth of the total.
pub fn warmup_steps(warmup_fraction: f64, total_steps: usize) -> usize {
    (warmup_fraction * total_steps as f64).floor() as usize
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    fn finish(self) -> String {
        format!("{:016x}", self.0)
    }
}

/// 64-bit FNV-1a fingerprint of a dictionary, sensitive to entry order.
pub fn fingerprint_entries(entries: &[DefinitionEntry]) -> String {
    let mut h = Fnv1a::new();
    for entry in entries {
        h.update(entry.word.as_bytes());
        h.update(&[0x1f]);
        h.update(entry.definition.as_bytes());
        h.update(&[0x1e]);
    }
    h.finish()
}

/// 64-bit FNV-1a fingerprint of a sentence corpus, sensitive to order.
pub fn fingerprint_sentences(sentences: &[String]) -> String {
    let mut h = Fnv1a::new();
    for sentence in sentences {
        h.update(sentence.as_bytes());
        h.update(&[0x1e]);
    }
    h.finish()
}

/// Shared epoch/step loop. `make_batches` receives the epoch's shuffle
/// sub-seed; `batch_loss` builds the loss graph for one batch, or returns
/// `None` to skip it (the step counter still advances).
fn run_epochs<B, L>(
    model: &mut EncoderModel,
    config: &TrainConfig,
    batches_per_epoch: usize,
    mut make_batches: B,
    mut batch_loss: L,
) -> Result<TrainReport, TrainError>
where
    B: FnMut(u64) -> Vec<TokenBatch>,
    L: for<'m> FnMut(&mut ForwardPass<'m, f32>, &TokenBatch, u64) -> Result<Option<Var>, TrainError>,
{
    let total_steps = config.epochs * batches_per_epoch;
    let warmup = warmup_steps(config.warmup_fraction, total_steps);
    let schedule = LrSchedule::with_decay(
        config.base_lr,
        warmup as u64,
        total_steps as u64,
        config.decay,
    );
    let mut adam = AdamState::new();
    let mut steps = Vec::new();
    let mut epoch_mean_loss = Vec::new();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let batches = make_batches(sub_seed_indexed(config.seed, "shuffle", epoch as u64));
        let mut epoch_losses = Vec::new();
        for batch in &batches {
            step += 1;
            let lr = lr_at(&schedule, step);
            let outcome = {
                let mut fwd = model.forward_train(sub_seed_indexed(config.seed, "dropout", step));
                match batch_loss(&mut fwd, batch, step)? {
                    None => None,
                    Some(loss) => {
                        fwd.backward(loss)?;
                        let value = fwd.tape().scalar_value(loss).to_f64();
                        Some((value, fwd.trainable_grads()))
                    }
                }
            };
            let Some((loss, mut grads)) = outcome else {
                continue;
            };
            if let Some(max_norm) = config.max_grad_norm {
                clip_grad_norm(&mut grads, max_norm);
            }
            adam_step(model.params_mut(), &grads, &mut adam, lr)?;
            epoch_losses.push(loss);
            steps.push(StepLog { step, lr, loss });
        }
        if !epoch_losses.is_empty() {
            let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
            epoch_mean_loss.push(mean);
        }
    }
    Ok(TrainReport {
        steps,
        epoch_mean_loss,
        total_steps,
        warmup_steps: warmup,
    })
}

/// Trains a fresh model on masked-token prediction over plain sentences.
/// Every parameter trains, prediction head included; the result is the
/// `Pretrained` checkpoint that fine-tuning later consumes.
pub fn pretrain_mlm(
    sentences: &[String],
    vocab: &Vocab,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    config.validate()?;
    if sentences.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if model_config.vocab_size != vocab.size() {
        return Err(TrainError::VocabMismatch {
            config: model_config.vocab_size,
            vocab: vocab.size(),
        });
    }
    let mut model = EncoderModel::new(model_config.clone(), sub_seed(config.seed, "init"))?;
    let max_len = model_config.max_len;
    let vocab_size = vocab.size() as u32;
    let batches_per_epoch = sentences.len().div_ceil(config.batch_size);
    let report = run_epochs(
        &mut model,
        config,
        batches_per_epoch,
        |shuffle_seed| {
            make_sentence_batches(sentences, vocab, config.batch_size, max_len, Some(shuffle_seed))
        },
        |fwd, batch, step| {
            let masked = mlm_mask(
                batch,
                vocab_size,
                config.mlm_mask_prob,
                sub_seed_indexed(config.seed, "mask", step),
            );
            let labels = masked.mlm_labels.as_ref().expect("mlm_mask always sets labels");
            let mut positions = Vec::new();
            let mut targets = Vec::new();
            for (pos, &label) in labels.iter().enumerate() {
                if label != NO_LABEL {
                    positions.push(pos);
                    targets.push(label as usize);
                }
            }
            if positions.is_empty() {
                return Ok(None);
            }
            let encoded = fwd.encode(&masked)?;
            let picked = fwd.tape_mut().gather_rows(encoded, &positions)?;
            let logits = fwd.predict_logits(picked)?;
            Ok(Some(fwd.tape_mut().cross_entropy_loss(logits, &targets)?))
        },
    )?;
    let provenance = Provenance {
        phase: Phase::Pretrained,
        seed: config.seed,
        lr: config.base_lr,
        pooling: config.pooling,
        data_fingerprint: fingerprint_sentences(sentences),
    };
    Ok((Checkpoint::from_model(&model, vocab, provenance), report))
}

/// Fine-tunes a pretrained checkpoint on headword prediction: each
/// definition is encoded, pooled, and pushed through the prediction head,
/// which stays frozen when `freeze_prediction_layer` is set.
///
/// Entries must already be vocabulary-filtered (a fixed point of
/// [`filter_oov`]), since the head can only score in-vocabulary headwords.
pub fn finetune_defsent(
    checkpoint: &Checkpoint,
    entries: &[DefinitionEntry],
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    config.validate()?;
    if checkpoint.phase() != Phase::Pretrained {
        return Err(TrainError::WrongPhase {
            expected: Phase::Pretrained,
            got: checkpoint.phase(),
        });
    }
    if entries.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let vocab = &checkpoint.vocab;
    let filtered = filter_oov(entries, vocab);
    for (i, entry) in entries.iter().enumerate() {
        if filtered.get(i) != Some(entry) {
            return Err(TrainError::UnfilteredEntry {
                word: entry.word.clone(),
            });
        }
    }
    let mut model = checkpoint.to_model()?;
    if config.freeze_prediction_layer {
        model.freeze_prediction_head();
    }
    let max_len = model.config().max_len;
    let batches_per_epoch = entries.len().div_ceil(config.batch_size);
    let report = run_epochs(
        &mut model,
        config,
        batches_per_epoch,
        |shuffle_seed| {
            make_definition_batches(entries, vocab, config.batch_size, max_len, Some(shuffle_seed))
        },
        |fwd, batch, _step| Ok(Some(fwd.defsent_loss(batch, config.pooling)?)),
    )?;
    let provenance = Provenance {
        phase: Phase::Finetuned,
        seed: config.seed,
        lr: config.base_lr,
        pooling: config.pooling,
        data_fingerprint: fingerprint_entries(entries),
    };
    Ok((Checkpoint::from_model(&model, vocab, provenance), report))
}

/// The grid's exponents: learning rates are `2^x` times a base, with x
/// running from 0 to 7 in half steps, 15 candidates in all.
pub const GRID_EXPONENTS: [f64; 15] = [
    0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.5, 7.0,
];

/// Base multiplier the grid was designed around. Desk-scale models want a
/// larger base (1e-4 is a good start), since the original magnitude targets
/// much bigger networks.
pub const DEFAULT_GRID_BASE: f64 = 1e-6;

/// One grid candidate and how it scored.
#[derive(Debug, Clone, Serialize)]
pub struct GridCandidate {
    pub lr: f64,
    pub dev_mrr: f64,
    pub seed: u64,
}

/// All candidates plus the winner: the highest dev MRR, ties going to the
/// smaller learning rate.
#[derive(Debug, Clone, Serialize)]
pub struct GridSearchResult {
    pub candidates: Vec<GridCandidate>,
    pub selected_lr: f64,
}

impl GridSearchResult {
    pub fn from_candidates(candidates: Vec<GridCandidate>) -> Result<GridSearchResult, TrainError> {
        if candidates.is_empty() {
            return Err(TrainError::EmptyGrid);
        }
        let mut best = &candidates[0];
        for candidate in &candidates[1..] {
            if candidate.dev_mrr > best.dev_mrr
                || (candidate.dev_mrr == best.dev_mrr && candidate.lr < best.lr)
            {
                best = candidate;
            }
        }
        let selected_lr = best.lr;
        Ok(GridSearchResult {
            candidates,
            selected_lr,
        })
    }
}

/// Fine-tunes one fresh copy of the checkpoint per candidate learning rate
/// `2^x × base` and scores each on dev MRR. Candidates run in parallel and
/// the input checkpoint is never mutated.
pub fn lr_grid_search(
    checkpoint: &Checkpoint,
    corpus: &SplitCorpus,
    template: &TrainConfig,
    exponents: &[f64],
    base: f64,
) -> Result<GridSearchResult, TrainError> {
    template.validate()?;
    if !base.is_finite() || base <= 0.0 {
        return Err(TrainError::InvalidConfig {
            detail: format!("grid base must be positive, got {base}"),
        });
    }
    if exponents.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if corpus.dev.is_empty() {
        return Err(TrainError::EmptyDevSplit);
    }
    let candidates = exponents
        .par_iter()
        .map(|&x| {
            let lr = 2f64.powf(x) * base;
            let config = TrainConfig {
                base_lr: lr,
                ..template.clone()
            };
            let (tuned, _) = finetune_defsent(checkpoint, &corpus.train, &config)?;
            let model = tuned.to_model()?;
            let report = eval_word_prediction(&model, &corpus.dev, &tuned.vocab, config.pooling)?;
            Ok(GridCandidate {
                lr,
                dev_mrr: report.mrr,
                seed: config.seed,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    GridSearchResult::from_candidates(candidates)
}

/// Per-metric mean and population standard deviation over several seeds.
#[derive(Debug, Clone, Serialize)]
pub struct MultiSeedReport {
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Runs a train/eval pipeline once per seed (in parallel) and aggregates
/// each metric across seeds. Every run must report the same metric names.
pub fn multi_seed<F>(seeds: &[u64], run: F) -> Result<MultiSeedReport, TrainError>
where
    F: Fn(u64) -> Result<BTreeMap<String, f64>, TrainError> + Sync,
{
    if seeds.is_empty() {
        return Err(TrainError::EmptySeeds);
    }
    let per_seed = seeds
        .par_iter()
        .map(|&seed| run(seed))
        .collect::<Result<Vec<_>, TrainError>>()?;
    let keys: Vec<&String> = per_seed[0].keys().collect();
    for (i, metrics) in per_seed.iter().enumerate() {
        let got: Vec<&String> = metrics.keys().collect();
        if got != keys {
            return Err(TrainError::InconsistentMetrics {
                detail: format!(
                    "seed {} reported {:?}, seed {} reported {:?}",
                    seeds[0], keys, seeds[i], got
                ),
            });
        }
    }
    let metrics = keys
        .into_iter()
        .map(|key| {
            let values: Vec<f64> = per_seed.iter().map(|m| m[key]).collect();
            (key.clone(), MetricSummary::from_values(&values))
        })
        .collect();
    Ok(MultiSeedReport {
        seeds: seeds.to_vec(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocab;
    use crate::rng::seeded_rng;
    use rand::seq::SliceRandom;

    const ANIMALS: [&str; 8] = ["cat", "dog", "fox", "owl", "hen", "bat", "cow", "ram"];
    const VERBS: [&str; 6] = ["chases", "sees", "likes", "fears", "follows", "greets"];
    const OBJECTS: [&str; 8] = ["ball", "rope", "tree", "pond", "gate", "lamp", "cart", "drum"];

    /// 200 training sentences and 40 held-out ones, all of the same
    /// five-slot template, with no sentence in both sets.
    fn template_corpus() -> (Vec<String>, Vec<String>) {
        let mut all = Vec::new();
        for a in ANIMALS {
            for v in VERBS {
                for o in OBJECTS {
                    all.push(format!("the {a} {v} the {o} today"));
                }
            }
        }
        all.shuffle(&mut seeded_rng(5));
        let held_out = all.split_off(200).into_iter().take(40).collect();
        (all, held_out)
    }

    fn tiny_model_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: 16,
            num_layers: 1,
            num_heads: 2,
            d_ff: 32,
            max_len: 8,
            dropout_prob: 0.0,
            ..ModelConfig::default()
        }
    }

    /// A 32-word dictionary where each headword has a unique marker token
    /// in its definition, plus a small sentence corpus tying each marker to
    /// its word. Returned entries are already vocabulary-filtered.
    fn marker_dictionary() -> (Vec<String>, Vec<DefinitionEntry>, Vocab) {
        let mut sentences = Vec::new();
        let mut raw = Vec::new();
        for i in 0..32 {
            let word = format!("word{i:02}");
            let mark = format!("mark{i:02}");
            sentences.push(format!("{word} carries {mark}"));
            sentences.push(format!("{mark} belongs to {word}"));
            sentences.push(format!("the {word} and the {mark}"));
            sentences.push(format!("{word} goes with {mark}"));
            sentences.push(format!("every {mark} names one {word}"));
            raw.push(DefinitionEntry::new(
                &word,
                format!("the object that carries {mark}"),
            ));
        }
        for entry in &raw {
            sentences.push(entry.definition.clone());
        }
        let vocab = build_vocab(sentences.iter(), 256).unwrap();
        let entries = filter_oov(&raw, &vocab);
        assert_eq!(entries.len(), 32, "every headword should survive filtering");
        (sentences, entries, vocab)
    }

    fn bits(tensor: &crate::tensor::Tensor<f32>) -> Vec<u32> {
        tensor.data().iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn config_defaults_follow_the_training_protocol() {
        let config = TrainConfig::default();
        assert_eq!(config.batch_size, 16);
        assert_eq!(config.epochs, 1);
        assert!((config.warmup_fraction - 0.10).abs() < 1e-15);
        assert_eq!(config.pooling, PoolingStrategy::Cls);
        assert!(config.freeze_prediction_layer);
        assert_eq!(config.max_grad_norm, None);
        assert_eq!(config.decay, Decay::Constant);
        let from_empty: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(from_empty, config);
    }

    #[test]
    fn config_validation_rejects_out_of_range_fields() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        let cases: Vec<TrainConfig> = vec![
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { base_lr: 0.0, ..ok.clone() },
            TrainConfig { base_lr: -1e-3, ..ok.clone() },
            TrainConfig { base_lr: f64::NAN, ..ok.clone() },
            TrainConfig { warmup_fraction: -0.1, ..ok.clone() },
            TrainConfig { warmup_fraction: 1.5, ..ok.clone() },
            TrainConfig { warmup_fraction: f64::NAN, ..ok.clone() },
            TrainConfig { max_grad_norm: Some(0.0), ..ok.clone() },
            TrainConfig { max_grad_norm: Some(f64::INFINITY), ..ok.clone() },
            TrainConfig { mlm_mask_prob: 0.0, ..ok.clone() },
            TrainConfig { mlm_mask_prob: 1.0, ..ok.clone() },
        ];
        for (i, config) in cases.iter().enumerate() {
            assert!(
                matches!(config.validate(), Err(TrainError::InvalidConfig { .. })),
                "case {i} should be rejected"
            );
        }
    }

    #[test]
    fn provenance_round_trips_with_lowercase_phase() {
        assert_eq!(Phase::Pretrained.to_string(), "pretrained");
        assert_eq!(Phase::Finetuned.to_string(), "finetuned");
        let provenance = Provenance {
            phase: Phase::Finetuned,
            seed: 7,
            lr: 2e-3,
            pooling: PoolingStrategy::Mean,
            data_fingerprint: "00ff00ff00ff00ff".to_string(),
        };
        let json = serde_json::to_string(&provenance).unwrap();
        assert!(json.contains("\"finetuned\""));
        assert!(json.contains("\"mean\""));
        let back: Provenance = serde_json::from_str(&json).unwrap();
        assert_eq!(back, provenance);
    }

    #[test]
    fn fingerprints_are_stable_and_order_sensitive() {
        let a = DefinitionEntry::new("sun", "the star at the center");
        let b = DefinitionEntry::new("moon", "the natural satellite");
        let fwd = fingerprint_entries(&[a.clone(), b.clone()]);
        let rev = fingerprint_entries(&[b, a]);
        assert_eq!(fwd.len(), 16);
        assert!(fwd.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        assert_ne!(fwd, rev);
        let again = fingerprint_entries(&[
            DefinitionEntry::new("sun", "the star at the center"),
            DefinitionEntry::new("moon", "the natural satellite"),
        ]);
        assert_eq!(fwd, again);

        let s1 = fingerprint_sentences(&["one two".to_string(), "three".to_string()]);
        let s2 = fingerprint_sentences(&["one".to_string(), "two three".to_string()]);
        assert_ne!(s1, s2, "record separators must keep boundaries distinct");
    }

    #[test]
    fn warmup_covers_one_tenth_of_training() {
        assert_eq!(warmup_steps(0.10, 20), 2);
        assert_eq!(warmup_steps(0.10, 199), 19);
        assert_eq!(warmup_steps(0.0, 50), 0);
        assert_eq!(warmup_steps(1.0, 50), 50);

        let sentences: Vec<String> = (0..32)
            .map(|i| format!("the item{i:02} works fine"))
            .collect();
        let vocab = build_vocab(sentences.iter(), 64).unwrap();
        let model_config = ModelConfig {
            d_model: 8,
            d_ff: 16,
            ..tiny_model_config(vocab.size())
        };
        let config = TrainConfig {
            epochs: 10,
            base_lr: 1e-3,
            ..TrainConfig::default()
        };
        let (_, report) = pretrain_mlm(&sentences, &vocab, &model_config, &config).unwrap();
        assert_eq!(report.total_steps, 20);
        assert_eq!(report.warmup_steps, 2);
        assert_eq!(report.steps.len(), 20);
        assert_eq!(report.steps[0].step, 1);
        assert!((report.steps[0].lr - 0.5e-3).abs() < 1e-15);
        for log in &report.steps[1..] {
            assert!((log.lr - 1e-3).abs() < 1e-15, "lr drifted at step {}", log.step);
        }
    }

    #[test]
    fn skipped_batches_still_advance_the_schedule() {
        // The empty sentence tokenizes to specials only, so its batch has
        // no maskable position and must be skipped without a step log. The
        // other batches are long enough, and the mask probability high
        // enough, that each gets at least one supervised position.
        let sentences: Vec<String> = vec![
            String::new(),
            "the quick brown fox jumps over lazy dogs".to_string(),
            "big dogs chase small cats around green parks".to_string(),
            "old owls watch young mice under bright stars".to_string(),
        ];
        let vocab = build_vocab(sentences.iter(), 64).unwrap();
        let model_config = ModelConfig {
            d_model: 8,
            d_ff: 16,
            max_len: 10,
            ..tiny_model_config(vocab.size())
        };
        let config = TrainConfig {
            batch_size: 1,
            warmup_fraction: 0.5,
            mlm_mask_prob: 0.6,
            ..TrainConfig::default()
        };
        let (_, report) = pretrain_mlm(&sentences, &vocab, &model_config, &config).unwrap();
        assert_eq!(report.total_steps, 4);
        assert_eq!(report.warmup_steps, 2);
        assert_eq!(report.steps.len(), 3, "exactly the empty sentence is skipped");
        let schedule = LrSchedule::new(config.base_lr, 2, 4);
        let mut last = 0;
        for log in &report.steps {
            assert!(log.step > last && log.step <= 4);
            last = log.step;
            assert_eq!(log.lr, lr_at(&schedule, log.step));
        }
    }

    #[test]
    fn masked_pretraining_learns_template_structure() {
        let (train, held_out) = template_corpus();
        let vocab = build_vocab(train.iter(), 64).unwrap();
        let model_config = tiny_model_config(vocab.size());
        let config = TrainConfig {
            epochs: 30,
            base_lr: 2e-3,
            seed: 7,
            ..TrainConfig::default()
        };
        let (checkpoint, report) = pretrain_mlm(&train, &vocab, &model_config, &config).unwrap();
        assert_eq!(checkpoint.phase(), Phase::Pretrained);

        let first = report.epoch_mean_loss[0];
        let last = *report.epoch_mean_loss.last().unwrap();
        assert!(
            last < 0.5 * first,
            "mean loss should at least halve: first {first:.3}, last {last:.3}"
        );

        // Masked-token accuracy on unseen sentences of the same grammar.
        // Random guessing scores 1/V; the bar is ten times that.
        let model = checkpoint.to_model().unwrap();
        let batches = make_sentence_batches(&held_out, &vocab, 16, model_config.max_len, None);
        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, batch) in batches.iter().enumerate() {
            let masked = mlm_mask(batch, vocab.size() as u32, 0.15, 900 + i as u64);
            let labels = masked.mlm_labels.clone().unwrap();
            let positions: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|&(_, &l)| l != NO_LABEL)
                .map(|(p, _)| p)
                .collect();
            if positions.is_empty() {
                continue;
            }
            let mut fwd = model.forward();
            let encoded = fwd.encode(&masked).unwrap();
            let picked = fwd.tape_mut().gather_rows(encoded, &positions).unwrap();
            let logits = fwd.predict_logits(picked).unwrap();
            let values = fwd.value(logits);
            let v = vocab.size();
            for (row, &pos) in positions.iter().enumerate() {
                let scores = &values.data()[row * v..(row + 1) * v];
                let argmax = scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if argmax == labels[pos] as usize {
                    correct += 1;
                }
                total += 1;
            }
        }
        let accuracy = correct as f64 / total as f64;
        let bar = 10.0 / vocab.size() as f64;
        assert!(
            accuracy > bar,
            "held-out masked accuracy {accuracy:.3} should beat {bar:.3} ({correct}/{total})"
        );
    }

    #[test]
    fn pretraining_is_deterministic_per_seed() {
        let sentences: Vec<String> = (0..40)
            .map(|i| format!("the piece{i:02} fits the slot{i:02}"))
            .collect();
        let vocab = build_vocab(sentences.iter(), 128).unwrap();
        let model_config = tiny_model_config(vocab.size());
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (first, report_a) = pretrain_mlm(&sentences, &vocab, &model_config, &config).unwrap();
        let (second, report_b) = pretrain_mlm(&sentences, &vocab, &model_config, &config).unwrap();
        assert_eq!(first.provenance, second.provenance);
        for (name, tensor) in &first.params {
            assert_eq!(bits(tensor), bits(&second.params[name]), "{name} diverged");
        }
        let losses = |r: &TrainReport| r.steps.iter().map(|s| s.loss).collect::<Vec<_>>();
        assert_eq!(losses(&report_a), losses(&report_b));

        let other_seed = TrainConfig { seed: 43, ..config };
        let (third, _) = pretrain_mlm(&sentences, &vocab, &model_config, &other_seed).unwrap();
        assert!(
            first.params.iter().any(|(name, t)| bits(t) != bits(&third.params[name])),
            "a different seed should produce different weights"
        );
    }

    #[test]
    fn pretraining_rejects_empty_or_mismatched_inputs() {
        let vocab = build_vocab(["some words here"], 32).unwrap();
        let config = TrainConfig::default();
        assert!(matches!(
            pretrain_mlm(&[], &vocab, &tiny_model_config(vocab.size()), &config),
            Err(TrainError::EmptyCorpus)
        ));
        let wrong = tiny_model_config(vocab.size() + 3);
        assert!(matches!(
            pretrain_mlm(&["some words".to_string()], &vocab, &wrong, &config),
            Err(TrainError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn finetuning_rejects_wrong_phase_and_unfiltered_entries() {
        let (sentences, entries, vocab) = marker_dictionary();
        let model_config = tiny_model_config(vocab.size());
        let pretrain_config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (checkpoint, _) =
            pretrain_mlm(&sentences, &vocab, &model_config, &pretrain_config).unwrap();
        let config = TrainConfig::default();

        let mut finetuned = checkpoint.clone();
        finetuned.provenance.phase = Phase::Finetuned;
        assert!(matches!(
            finetune_defsent(&finetuned, &entries, &config),
            Err(TrainError::WrongPhase {
                expected: Phase::Pretrained,
                got: Phase::Finetuned,
            })
        ));

        assert!(matches!(
            finetune_defsent(&checkpoint, &[], &config),
            Err(TrainError::EmptyCorpus)
        ));

        let mut with_oov = entries.clone();
        with_oov.push(DefinitionEntry::new("zzz", "not in the vocabulary"));
        assert!(matches!(
            finetune_defsent(&checkpoint, &with_oov, &config),
            Err(TrainError::UnfilteredEntry { word }) if word == "zzz"
        ));

        // An in-vocabulary headword still fails if its id was never stamped.
        let mut unstamped = entries.clone();
        unstamped[3] = DefinitionEntry::new(
            entries[3].word.clone(),
            entries[3].definition.clone(),
        );
        assert!(matches!(
            finetune_defsent(&checkpoint, &unstamped, &config),
            Err(TrainError::UnfilteredEntry { word }) if word == entries[3].word
        ));
    }

    #[test]
    fn finetuning_freezes_the_prediction_head_bitwise() {
        let (sentences, entries, vocab) = marker_dictionary();
        let model_config = ModelConfig {
            d_model: 16,
            num_layers: 1,
            ..tiny_model_config(vocab.size())
        };
        let pretrain_config = TrainConfig {
            epochs: 3,
            base_lr: 2e-3,
            ..TrainConfig::default()
        };
        let (checkpoint, _) =
            pretrain_mlm(&sentences, &vocab, &model_config, &pretrain_config).unwrap();

        let config = TrainConfig {
            epochs: 2,
            base_lr: 2e-3,
            ..TrainConfig::default()
        };
        let (tuned, _) = finetune_defsent(&checkpoint, &entries, &config).unwrap();
        assert_eq!(tuned.phase(), Phase::Finetuned);
        let frozen = |name: &str| name.starts_with("head.") || name == "token_embedding";
        for (name, tensor) in &checkpoint.params {
            if frozen(name) {
                assert_eq!(
                    bits(tensor),
                    bits(&tuned.params[name]),
                    "{name} moved despite freezing"
                );
            }
        }
        assert!(
            checkpoint
                .params
                .iter()
                .any(|(name, t)| !frozen(name) && bits(t) != bits(&tuned.params[name])),
            "encoder parameters should have moved"
        );

        let thawed = TrainConfig {
            freeze_prediction_layer: false,
            ..config
        };
        let (unfrozen, _) = finetune_defsent(&checkpoint, &entries, &thawed).unwrap();
        assert_ne!(
            bits(&checkpoint.params["token_embedding"]),
            bits(&unfrozen.params["token_embedding"]),
            "without freezing, the tied embedding should train"
        );
    }

    /// Memorizing 32 definitions through the frozen head needs that head to
    /// be good first: the masked-token phase must converge far enough that
    /// headword embeddings (the frozen decoder rows) carry real margins.
    /// Hence the long pretraining and the raised mask probability here.
    #[test]
    fn finetuning_overfits_a_tiny_dictionary() {
        let (sentences, entries, vocab) = marker_dictionary();
        let model_config = ModelConfig {
            d_model: 32,
            num_layers: 2,
            num_heads: 4,
            d_ff: 64,
            ..tiny_model_config(vocab.size())
        };
        let pretrain_config = TrainConfig {
            epochs: 300,
            base_lr: 3e-3,
            seed: 13,
            mlm_mask_prob: 0.3,
            ..TrainConfig::default()
        };
        let (checkpoint, _) =
            pretrain_mlm(&sentences, &vocab, &model_config, &pretrain_config).unwrap();

        let config = TrainConfig {
            epochs: 300,
            batch_size: 4,
            base_lr: 2e-3,
            seed: 17,
            pooling: PoolingStrategy::Mean,
            ..TrainConfig::default()
        };
        let (tuned, report) = finetune_defsent(&checkpoint, &entries, &config).unwrap();
        assert!(
            report.epoch_mean_loss[9] < report.epoch_mean_loss[0],
            "epoch-mean loss should fall over the first ten epochs: {:?}",
            &report.epoch_mean_loss[..10]
        );

        let model = tuned.to_model().unwrap();
        let rank = eval_word_prediction(&model, &entries, &vocab, config.pooling).unwrap();
        assert!(
            rank.top1 >= 0.95,
            "expected the training set memorized, got top-1 {:.3} (MRR {:.3})",
            rank.top1,
            rank.mrr
        );
    }

    #[test]
    fn grid_exponents_match_the_protocol_shape() {
        assert_eq!(GRID_EXPONENTS.len(), 15);
        for (i, &x) in GRID_EXPONENTS.iter().enumerate() {
            assert_eq!(x, i as f64 / 2.0);
        }
        let lrs: Vec<f64> = GRID_EXPONENTS
            .iter()
            .map(|&x| 2f64.powf(x) * DEFAULT_GRID_BASE)
            .collect();
        assert!((lrs[0] - 1e-6).abs() < 1e-18);
        assert!((lrs[14] - 128e-6).abs() < 1e-15);
        assert!(lrs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_selection_takes_the_best_mrr_and_breaks_ties_downward() {
        let tied = vec![
            GridCandidate { lr: 4e-3, dev_mrr: 0.5, seed: 1 },
            GridCandidate { lr: 1e-3, dev_mrr: 0.5, seed: 1 },
            GridCandidate { lr: 2e-3, dev_mrr: 0.5, seed: 1 },
        ];
        let result = GridSearchResult::from_candidates(tied).unwrap();
        assert_eq!(result.selected_lr, 1e-3);

        let spread = vec![
            GridCandidate { lr: 1e-3, dev_mrr: 0.3, seed: 1 },
            GridCandidate { lr: 2e-3, dev_mrr: 0.7, seed: 1 },
            GridCandidate { lr: 4e-3, dev_mrr: 0.5, seed: 1 },
        ];
        let result = GridSearchResult::from_candidates(spread).unwrap();
        assert_eq!(result.selected_lr, 2e-3);
        let best = result
            .candidates
            .iter()
            .find(|c| c.lr == result.selected_lr)
            .unwrap();
        assert!(result.candidates.iter().all(|c| c.dev_mrr <= best.dev_mrr));

        assert!(matches!(
            GridSearchResult::from_candidates(vec![]),
            Err(TrainError::EmptyGrid)
        ));
    }

    #[test]
    fn grid_search_scores_every_candidate_and_keeps_the_checkpoint_intact() {
        let (sentences, entries, vocab) = marker_dictionary();
        let model_config = tiny_model_config(vocab.size());
        let pretrain_config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (checkpoint, _) =
            pretrain_mlm(&sentences, &vocab, &model_config, &pretrain_config).unwrap();
        let before: BTreeMap<String, Vec<u32>> = checkpoint
            .params
            .iter()
            .map(|(name, t)| (name.clone(), bits(t)))
            .collect();

        let corpus = SplitCorpus {
            train: entries[..24].to_vec(),
            dev: entries[24..].to_vec(),
            test: vec![],
        };
        let template = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let exponents = [0.0, 1.0, 2.0];
        let result =
            lr_grid_search(&checkpoint, &corpus, &template, &exponents, 1e-3).unwrap();

        assert_eq!(result.candidates.len(), 3);
        for (candidate, &x) in result.candidates.iter().zip(&exponents) {
            assert!((candidate.lr - 2f64.powf(x) * 1e-3).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&candidate.dev_mrr));
            assert_eq!(candidate.seed, template.seed);
        }
        let best = result
            .candidates
            .iter()
            .find(|c| c.lr == result.selected_lr)
            .unwrap();
        assert!(result.candidates.iter().all(|c| c.dev_mrr <= best.dev_mrr));
        for (name, tensor) in &checkpoint.params {
            assert_eq!(bits(tensor), before[name], "{name} mutated by grid search");
        }

        let no_dev = SplitCorpus {
            train: corpus.train.clone(),
            dev: vec![],
            test: vec![],
        };
        assert!(matches!(
            lr_grid_search(&checkpoint, &no_dev, &template, &exponents, 1e-3),
            Err(TrainError::EmptyDevSplit)
        ));
        assert!(matches!(
            lr_grid_search(&checkpoint, &corpus, &template, &[], 1e-3),
            Err(TrainError::EmptyGrid)
        ));
    }

    #[test]
    fn multi_seed_aggregates_each_metric() {
        let report = multi_seed(&[2, 4], |seed| {
            Ok(BTreeMap::from([("mrr".to_string(), seed as f64 / 10.0)]))
        })
        .unwrap();
        assert_eq!(report.seeds, vec![2, 4]);
        let mrr = &report.metrics["mrr"];
        assert!((mrr.mean - 0.3).abs() < 1e-12);
        assert!((mrr.std - 0.1).abs() < 1e-12);
        assert_eq!(mrr.per_seed, vec![0.2, 0.4]);

        let single = multi_seed(&[7], |_| {
            Ok(BTreeMap::from([("rho".to_string(), 0.42)]))
        })
        .unwrap();
        assert_eq!(single.metrics["rho"].std, 0.0);
        assert_eq!(single.metrics["rho"].mean, 0.42);

        assert!(matches!(
            multi_seed(&[], |_| Ok(BTreeMap::new())),
            Err(TrainError::EmptySeeds)
        ));
        assert!(matches!(
            multi_seed(&[1, 2], |seed| {
                let key = if seed == 1 { "a" } else { "b" };
                Ok(BTreeMap::from([(key.to_string(), 0.5)]))
            }),
            Err(TrainError::InconsistentMetrics { .. })
        ));
        assert!(multi_seed(&[1, 9], |seed| {
            if seed == 9 {
                Err(TrainError::EmptyCorpus)
            } else {
                Ok(BTreeMap::from([("x".to_string(), 0.0)]))
            }
        })
        .is_err());
    }
}
