//! Competition ranking of word-prediction scores and the derived metrics.

use rayon::prelude::*;
use serde::Serialize;

use super::EvalError;
use crate::data::{make_definition_batches, DefinitionEntry, Vocab};
use crate::model::{EncoderModel, PoolingStrategy};
use crate::tensor::Scalar;

/// Rows per forward pass when scoring definitions.
const EVAL_BATCH: usize = 32;

/// Mean reciprocal rank and top-k accuracies over a set of examples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub mrr: f64,
    pub top1: f64,
    pub top3: f64,
    pub top10: f64,
    pub n_examples: usize,
}

/// Competition rank of `target` inside a score vector: 1 plus the number of
/// strictly greater entries, so ties never worsen the rank.
pub fn rank_of_target<T: Scalar>(scores: &[T], target: usize) -> Result<usize, EvalError> {
    if target >= scores.len() {
        return Err(EvalError::TargetOutOfRange {
            target,
            size: scores.len(),
        });
    }
    let pivot = scores[target];
    Ok(1 + scores.iter().filter(|&&s| s > pivot).count())
}

/// Aggregates ranks into MRR and top-1/3/10 accuracy.
pub fn rank_metrics(ranks: &[usize]) -> Result<RankReport, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyInput { what: "rank list" });
    }
    assert!(ranks.iter().all(|&r| r >= 1), "ranks start at 1");
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let frac_within = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(RankReport {
        mrr,
        top1: frac_within(1),
        top3: frac_within(3),
        top10: frac_within(10),
        n_examples: ranks.len(),
    })
}

/// Embeds every definition, scores the whole vocabulary through the
/// prediction head, and ranks each entry's headword. Entries must already
/// be OOV-filtered so `word_id` is meaningful. Batches are scored in
/// parallel and merged in input order.
pub fn eval_word_prediction(
    model: &EncoderModel,
    entries: &[DefinitionEntry],
    vocab: &Vocab,
    strategy: PoolingStrategy,
) -> Result<RankReport, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::EmptyInput {
            what: "definition entry list",
        });
    }
    let max_len = model.config().max_len;
    let batches = make_definition_batches(entries, vocab, EVAL_BATCH, max_len, None);
    let per_batch: Vec<Result<Vec<usize>, EvalError>> = batches
        .par_iter()
        .map(|batch| {
            let mut pass = model.forward();
            let encoded = pass.encode(batch)?;
            let pooled = pass.pool(encoded, batch, strategy)?;
            let logits = pass.predict_logits(pooled)?;
            let scores = pass.value(logits);
            let targets = batch.targets.as_ref().expect("definition batches carry targets");
            let mut ranks = Vec::with_capacity(batch.rows);
            for (row, &target) in targets.iter().enumerate() {
                ranks.push(rank_of_target(scores.row(row), target as usize)?);
            }
            Ok(ranks)
        })
        .collect();
    let mut ranks = Vec::with_capacity(entries.len());
    for batch_ranks in per_batch {
        ranks.extend(batch_ranks?);
    }
    rank_metrics(&ranks)
}
