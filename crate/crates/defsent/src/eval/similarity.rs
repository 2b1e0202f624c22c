//! Cosine similarity and tie-robust Spearman rank correlation.

use rayon::prelude::*;
use serde::Serialize;

use super::EvalError;
use crate::data::{STSPair, Vocab};
use crate::model::{EncoderModel, PoolingStrategy};
use crate::tensor::Scalar;

/// Spearman correlation between embedding similarities and gold scores for
/// one similarity dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct STSReport {
    pub rho: f64,
    pub n_pairs: usize,
}

/// Cosine of the angle between two equally long, non-zero vectors,
/// accumulated in f64.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<f64, EvalError> {
    if u.len() != v.len() {
        return Err(EvalError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(EvalError::EmptyInput { what: "vector" });
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.to_f64(), b.to_f64());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Ranks with ties sharing the average of the positions they occupy,
/// 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 {
        return Err(EvalError::ConstantSeries { which: "first" });
    }
    if vy == 0.0 {
        return Err(EvalError::ConstantSeries { which: "second" });
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Spearman's rank correlation: the Pearson correlation of average ranks.
/// Tie-robust, and equal to the classic `1 - 6 Σd² / (n(n²-1))` whenever no
/// value repeats.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(EvalError::TooFewSamples {
            what: "correlation series",
            found: x.len(),
            required: 3,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite {
            what: "correlation series",
        });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Embeds both sides of every pair, measures their cosine similarity, and
/// correlates the similarities with the gold scores. Purely unsupervised:
/// the model is read, never updated. Pairs are embedded in parallel and
/// merged in input order.
pub fn eval_sts(
    model: &EncoderModel,
    pairs: &[STSPair],
    vocab: &Vocab,
    strategy: PoolingStrategy,
) -> Result<STSReport, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::TooFewSamples {
            what: "similarity pair list",
            found: pairs.len(),
            required: 3,
        });
    }
    let similarities: Vec<Result<f64, EvalError>> = pairs
        .par_iter()
        .map(|pair| {
            let a = model.embed_sentence(vocab, &pair.sentence_a, strategy)?;
            let b = model.embed_sentence(vocab, &pair.sentence_b, strategy)?;
            cosine_similarity(&a, &b)
        })
        .collect();
    let similarities = similarities.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    Ok(STSReport {
        rho: spearman_rho(&similarities, &gold)?,
        n_pairs: pairs.len(),
    })
}
