//! Padded token batches and masked-token corruption.

use rand::seq::SliceRandom;
use rand::Rng;

use super::dictionary::DefinitionEntry;
use super::vocab::{tokenize, Vocab};
use crate::rng::seeded_rng;

/// Label value marking positions the MLM objective does not supervise.
pub const NO_LABEL: i32 = -1;

/// A rectangular batch of token ids, PAD-filled to the longest row.
///
/// Invariants: the attention mask is 0 exactly where the id is PAD; every
/// row starts with CLS and carries exactly one SEP at its last unpadded
/// position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub rows: usize,
    pub cols: usize,
    /// Token ids, row-major `rows × cols`.
    pub ids: Vec<u32>,
    /// Attention mask, 1 on real tokens and 0 on padding.
    pub mask: Vec<u8>,
    /// Headword id per row, present for definition batches.
    pub targets: Option<Vec<u32>>,
    /// Original token id at corrupted positions, [`NO_LABEL`] elsewhere.
    pub mlm_labels: Option<Vec<i32>>,
}

impl TokenBatch {
    /// Builds a batch from tokenized rows (each already `CLS ... SEP`),
    /// padding every row to the longest.
    pub fn from_rows(token_rows: &[Vec<u32>], targets: Option<Vec<u32>>) -> Self {
        assert!(!token_rows.is_empty(), "a batch needs at least one row");
        debug_assert!(targets.as_ref().is_none_or(|t| t.len() == token_rows.len()));
        let cols = token_rows.iter().map(Vec::len).max().unwrap_or(0);
        let rows = token_rows.len();
        let mut ids = vec![Vocab::PAD; rows * cols];
        let mut mask = vec![0u8; rows * cols];
        for (i, row) in token_rows.iter().enumerate() {
            for (j, &id) in row.iter().enumerate() {
                ids[i * cols + j] = id;
                mask[i * cols + j] = 1;
            }
        }
        TokenBatch {
            rows,
            cols,
            ids,
            mask,
            targets,
            mlm_labels: None,
        }
    }

    pub fn id(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.cols + col]
    }

    pub fn masked(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col] == 0
    }

    /// Number of real (unpadded) tokens in a row.
    pub fn row_len(&self, row: usize) -> usize {
        self.mask[row * self.cols..(row + 1) * self.cols]
            .iter()
            .map(|&m| m as usize)
            .sum()
    }

    /// Verifies the structural invariants; test support.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.ids.len() != self.rows * self.cols || self.mask.len() != self.ids.len() {
            return Err("storage does not match rows × cols".to_string());
        }
        for i in 0..self.rows {
            let len = self.row_len(i);
            if len < 2 {
                return Err(format!("row {i} shorter than CLS+SEP"));
            }
            if self.id(i, 0) != Vocab::CLS {
                return Err(format!("row {i} does not start with CLS"));
            }
            for j in 0..self.cols {
                let is_pad = self.id(i, j) == Vocab::PAD;
                let mask_zero = self.masked(i, j);
                if is_pad != mask_zero {
                    return Err(format!("row {i} col {j}: mask/PAD disagreement"));
                }
                let is_sep = self.id(i, j) == Vocab::SEP;
                if is_sep != (j == len - 1) {
                    return Err(format!("row {i} col {j}: SEP misplaced"));
                }
            }
        }
        Ok(())
    }
}

/// Applies BERT-style corruption for masked-token pretraining. Among
/// non-special, non-pad positions each is selected independently with
/// `mask_prob`; a selected position becomes MASK with probability 0.8, a
/// random non-special token with 0.1, and stays unchanged with 0.1. Labels
/// record the original id at selected positions and [`NO_LABEL`] elsewhere.
///
/// Draws consume the seeded stream in row-major position order, so a fixed
/// `(batch, seed)` pair always selects the same positions.
pub fn mlm_mask(batch: &TokenBatch, vocab_size: u32, mask_prob: f64, seed: u64) -> TokenBatch {
    assert!(
        mask_prob > 0.0 && mask_prob < 1.0,
        "mask_prob must be in (0, 1), got {mask_prob}"
    );
    assert!(vocab_size > Vocab::FIRST_WORD, "vocabulary has no words");
    let mut rng = seeded_rng(seed);
    let mut out = batch.clone();
    let mut labels = vec![NO_LABEL; batch.ids.len()];
    for (pos, id) in out.ids.iter_mut().enumerate() {
        if batch.mask[pos] == 0 || *id < Vocab::FIRST_WORD {
            continue;
        }
        if rng.random::<f64>() >= mask_prob {
            continue;
        }
        labels[pos] = *id as i32;
        let roll = rng.random::<f64>();
        if roll < 0.8 {
            *id = Vocab::MASK;
        } else if roll < 0.9 {
            *id = rng.random_range(Vocab::FIRST_WORD..vocab_size);
        }
    }
    out.mlm_labels = Some(labels);
    out
}

/// Batches definition entries in seeded-shuffle order (or input order when
/// `shuffle_seed` is `None`), tokenizing each definition and carrying the
/// headword id as the per-row target. The final partial batch is emitted.
pub fn make_definition_batches(
    entries: &[DefinitionEntry],
    vocab: &Vocab,
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Vec<TokenBatch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let order = shuffled_indices(entries.len(), shuffle_seed);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<Vec<u32>> = chunk
                .iter()
                .map(|&i| tokenize(&entries[i].definition, vocab, max_len))
                .collect();
            let targets = chunk.iter().map(|&i| entries[i].word_id).collect();
            TokenBatch::from_rows(&rows, Some(targets))
        })
        .collect()
}

/// Batches plain sentences the same way, without targets.
pub fn make_sentence_batches(
    sentences: &[String],
    vocab: &Vocab,
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Vec<TokenBatch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let order = shuffled_indices(sentences.len(), shuffle_seed);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<Vec<u32>> = chunk
                .iter()
                .map(|&i| tokenize(&sentences[i], vocab, max_len))
                .collect();
            TokenBatch::from_rows(&rows, None)
        })
        .collect()
}

fn shuffled_indices(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded_rng(seed));
    }
    order
}
