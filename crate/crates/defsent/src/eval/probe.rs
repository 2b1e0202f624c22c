//! Logistic-regression probe with k-fold cross-validation.
//!
//! The probe measures how much label information frozen sentence
//! embeddings carry. It deliberately trains its own multinomial logistic
//! regression with full-batch gradient descent and a fixed iteration
//! budget: no line search, no stochastic order, no external solver, so a
//! fixed seed reproduces the exact fold assignment and accuracies.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::EvalError;
use crate::rng::seeded_rng;
use crate::tensor::Scalar;

/// Full-batch gradient-descent iterations per fold.
const ITERATIONS: usize = 300;
/// Step size for the probe's gradient descent.
const STEP_SIZE: f64 = 0.5;
/// L2 regularization strength on the probe weights.
const L2_LAMBDA: f64 = 1e-4;

/// Per-fold and mean accuracy of the cross-validated probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub k: usize,
    pub seed: u64,
}

/// Shuffles the samples with `seed`, cuts them into `k` contiguous folds
/// whose sizes differ by at most one, and for each fold trains a
/// multinomial logistic regression on the other k-1 folds and scores it on
/// the held-out fold. Folds train in parallel; the report lists them in
/// fold order.
pub fn probe_classifier<T: Scalar>(
    embeddings: &[Vec<T>],
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<ProbeReport, EvalError> {
    if embeddings.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: embeddings.len(),
            right: labels.len(),
        });
    }
    let n = labels.len();
    if n < k {
        return Err(EvalError::TooFewSamples {
            what: "probe sample set",
            found: n,
            required: k,
        });
    }
    if k < 2 {
        return Err(EvalError::TooFewSamples {
            what: "fold count",
            found: k,
            required: 2,
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(EvalError::LengthMismatch {
            left: dim,
            right: bad.len(),
        });
    }

    // Dense class ids and f64 features, shared read-only across folds.
    let dense: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("dedup kept every label"))
        .collect();
    let features: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().map(|x| x.to_f64()).collect())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let bounds: Vec<(usize, usize)> = (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect();

    let fold_accuracies: Vec<f64> = bounds
        .par_iter()
        .map(|&(start, end)| {
            let held_out = &order[start..end];
            let train: Vec<usize> = order[..start]
                .iter()
                .chain(&order[end..])
                .copied()
                .collect();
            let weights = train_logistic(&features, &dense, &train, classes.len(), dim);
            let correct = held_out
                .iter()
                .filter(|&&i| predict(&weights, &features[i], classes.len(), dim) == dense[i])
                .count();
            correct as f64 / held_out.len() as f64
        })
        .collect();

    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(ProbeReport {
        fold_accuracies,
        mean_accuracy,
        k,
        seed,
    })
}

/// Weights are `classes × (dim + 1)` row-major, last column the intercept.
fn train_logistic(
    features: &[Vec<f64>],
    labels: &[usize],
    train: &[usize],
    classes: usize,
    dim: usize,
) -> Vec<f64> {
    let width = dim + 1;
    let mut weights = vec![0.0f64; classes * width];
    let mut grad = vec![0.0f64; classes * width];
    let inv_n = 1.0 / train.len() as f64;
    for _ in 0..ITERATIONS {
        for (g, &w) in grad.iter_mut().zip(&weights) {
            *g = L2_LAMBDA * w;
        }
        for &i in train {
            let x = &features[i];
            let probs = class_probabilities(&weights, x, classes, dim);
            for (c, &p) in probs.iter().enumerate() {
                let err = (p - if labels[i] == c { 1.0 } else { 0.0 }) * inv_n;
                let row = &mut grad[c * width..(c + 1) * width];
                for (gd, &xd) in row[..dim].iter_mut().zip(x) {
                    *gd += err * xd;
                }
                row[dim] += err;
            }
        }
        for (w, &g) in weights.iter_mut().zip(&grad) {
            *w -= STEP_SIZE * g;
        }
    }
    weights
}

fn class_probabilities(weights: &[f64], x: &[f64], classes: usize, dim: usize) -> Vec<f64> {
    let width = dim + 1;
    let mut scores: Vec<f64> = (0..classes)
        .map(|c| {
            let row = &weights[c * width..(c + 1) * width];
            row[..dim].iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>() + row[dim]
        })
        .collect();
    let peak = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - peak).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    scores
}

/// Argmax class, ties toward the smaller id.
fn predict(weights: &[f64], x: &[f64], classes: usize, dim: usize) -> usize {
    let probs = class_probabilities(weights, x, classes, dim);
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    best
}
