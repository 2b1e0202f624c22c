//! Forward-pass graph construction over a fresh tape.
//!
//! A [`ForwardPass`] registers every model parameter as a tape leaf once,
//! then offers the building blocks of the architecture: `encode` runs the
//! embedding and attention stack, `pool` reduces each sentence to one
//! vector, `predict_logits` applies the word-prediction head, and
//! `defsent_loss` chains all three into the training objective. After
//! `backward`, `trainable_grads` hands the accumulated gradients back keyed
//! by parameter name, ready for an optimizer step.
//!
//! Pad positions are excluded from attention by adding a large negative
//! constant to their score columns before the softmax. The shift is big
//! enough that the exponential underflows to exactly zero, so outputs at
//! real positions are bitwise invariant to whatever ids sit in the padding.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{EncoderModel, ModelError, PoolingStrategy, LAYER_NORM_EPS};
use crate::data::{TokenBatch, Vocab};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Additive attention-score penalty for pad columns.
const PAD_SCORE_BIAS: f64 = -1e9;

/// One forward pass under construction. Training mode carries a dropout
/// stream; evaluation mode is deterministic.
pub struct ForwardPass<'m, T: Scalar = f32> {
    model: &'m EncoderModel<T>,
    tape: Tape<T>,
    leaves: BTreeMap<String, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'m, T: Scalar> ForwardPass<'m, T> {
    pub(super) fn new(model: &'m EncoderModel<T>, dropout_rng: Option<ChaCha8Rng>) -> Self {
        let mut tape = Tape::new();
        let leaves = model
            .params()
            .iter()
            .map(|(name, tensor)| (name.clone(), tape.leaf(tensor)))
            .collect();
        ForwardPass {
            model,
            tape,
            leaves,
            dropout_rng,
        }
    }

    /// The tape variable holding a named parameter.
    fn p(&self, name: &str) -> Var {
        self.leaves[name]
    }

    fn layer_p(&self, layer: usize, suffix: &str) -> Var {
        self.p(&format!("encoder.{layer}.{suffix}"))
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }

    /// Value of any node built so far.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Applies dropout in training mode; a no-op in evaluation mode or at
    /// probability zero.
    fn maybe_dropout(&mut self, x: Var) -> Result<Var, ModelError> {
        let p = self.model.config().dropout_prob;
        match &mut self.dropout_rng {
            Some(rng) if p > 0.0 => Ok(self.tape.dropout(x, p, rng)?),
            _ => Ok(x),
        }
    }

    /// Runs the embedding and attention stack, producing contextual
    /// embeddings with one row per token position (`rows·cols × d_model`).
    pub fn encode(&mut self, batch: &TokenBatch) -> Result<Var, ModelError> {
        let config = self.model.config();
        if batch.cols > config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: batch.cols,
                max_len: config.max_len,
            });
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(ModelError::TokenIdOutOfRange {
                id,
                vocab_size: config.vocab_size,
            });
        }

        let token_idx: Vec<usize> = batch.ids.iter().map(|&id| id as usize).collect();
        let pos_idx: Vec<usize> = (0..batch.rows * batch.cols).map(|i| i % batch.cols).collect();
        let tok = self.tape.gather_rows(self.p("token_embedding"), &token_idx)?;
        let pos = self.tape.gather_rows(self.p("position_embedding"), &pos_idx)?;
        let mut x = self.tape.add(tok, pos)?;
        x = self.maybe_dropout(x)?;

        let pad_bias = self.pad_score_biases(batch);
        for layer in 0..config.num_layers {
            x = self.encoder_layer(x, layer, batch, &pad_bias)?;
        }
        Ok(x)
    }

    /// One constant `cols × cols` score-bias matrix per sentence, carrying
    /// the pad penalty in every padded column; `None` for unpadded rows.
    fn pad_score_biases(&mut self, batch: &TokenBatch) -> Vec<Option<Var>> {
        let l = batch.cols;
        (0..batch.rows)
            .map(|b| {
                let row_mask = &batch.mask[b * l..(b + 1) * l];
                if row_mask.iter().all(|&m| m == 1) {
                    return None;
                }
                let mut bias = vec![T::zero(); l * l];
                for (j, &m) in row_mask.iter().enumerate() {
                    if m == 0 {
                        for i in 0..l {
                            bias[i * l + j] = T::from_f64(PAD_SCORE_BIAS);
                        }
                    }
                }
                let t = Tensor::new(vec![l, l], bias).expect("finite bias matrix");
                Some(self.tape.constant(&t))
            })
            .collect()
    }

    /// Multi-head self-attention, then the position-wise feed-forward, each
    /// followed by a residual connection and layer norm.
    fn encoder_layer(
        &mut self,
        x: Var,
        layer: usize,
        batch: &TokenBatch,
        pad_bias: &[Option<Var>],
    ) -> Result<Var, ModelError> {
        let config = self.model.config();
        let (heads, d_head, l) = (config.num_heads, config.d_head(), batch.cols);

        let q = {
            let w = self.layer_p(layer, "attn.wq");
            let b = self.layer_p(layer, "attn.bq");
            let prod = self.tape.matmul(x, w)?;
            self.tape.add_bias(prod, b)?
        };
        let k = {
            let w = self.layer_p(layer, "attn.wk");
            let b = self.layer_p(layer, "attn.bk");
            let prod = self.tape.matmul(x, w)?;
            self.tape.add_bias(prod, b)?
        };
        let v = {
            let w = self.layer_p(layer, "attn.wv");
            let b = self.layer_p(layer, "attn.bv");
            let prod = self.tape.matmul(x, w)?;
            self.tape.add_bias(prod, b)?
        };

        let scale = 1.0 / (d_head as f64).sqrt();
        let mut sentence_outputs = Vec::with_capacity(batch.rows);
        for b in 0..batch.rows {
            let qb = self.tape.slice_rows(q, b * l, l)?;
            let kb = self.tape.slice_rows(k, b * l, l)?;
            let vb = self.tape.slice_rows(v, b * l, l)?;
            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = self.tape.slice_cols(qb, h * d_head, d_head)?;
                let kh = self.tape.slice_cols(kb, h * d_head, d_head)?;
                let vh = self.tape.slice_cols(vb, h * d_head, d_head)?;
                let kt = self.tape.transpose(kh)?;
                let raw = self.tape.matmul(qh, kt)?;
                let mut scores = self.tape.scale(raw, scale)?;
                if let Some(bias) = pad_bias[b] {
                    scores = self.tape.add(scores, bias)?;
                }
                let attn = self.tape.softmax(scores, 1)?;
                head_outputs.push(self.tape.matmul(attn, vh)?);
            }
            sentence_outputs.push(self.tape.concat_cols(&head_outputs)?);
        }
        let context = self.tape.concat_rows(&sentence_outputs)?;

        let wo = self.layer_p(layer, "attn.wo");
        let bo = self.layer_p(layer, "attn.bo");
        let projected = self.tape.matmul(context, wo)?;
        let mut attn_out = self.tape.add_bias(projected, bo)?;
        attn_out = self.maybe_dropout(attn_out)?;
        let summed = self.tape.add(x, attn_out)?;
        let gain1 = self.layer_p(layer, "ln1.gain");
        let bias1 = self.layer_p(layer, "ln1.bias");
        let x = self.tape.layer_norm(summed, gain1, bias1, LAYER_NORM_EPS)?;

        let w1 = self.layer_p(layer, "ff.w1");
        let b1 = self.layer_p(layer, "ff.b1");
        let h1 = self.tape.matmul(x, w1)?;
        let h1 = self.tape.add_bias(h1, b1)?;
        let h1 = self.tape.gelu(h1)?;
        let w2 = self.layer_p(layer, "ff.w2");
        let b2 = self.layer_p(layer, "ff.b2");
        let h2 = self.tape.matmul(h1, w2)?;
        let mut ff_out = self.tape.add_bias(h2, b2)?;
        ff_out = self.maybe_dropout(ff_out)?;
        let summed = self.tape.add(x, ff_out)?;
        let gain2 = self.layer_p(layer, "ln2.gain");
        let bias2 = self.layer_p(layer, "ln2.bias");
        Ok(self.tape.layer_norm(summed, gain2, bias2, LAYER_NORM_EPS)?)
    }

    /// Reduces contextual embeddings to one vector per sentence. `encoded`
    /// must have exactly one row per position of `batch`. Pad positions
    /// never contribute; the config switch additionally drops CLS and SEP
    /// from Mean and Max.
    pub fn pool(
        &mut self,
        encoded: Var,
        batch: &TokenBatch,
        strategy: PoolingStrategy,
    ) -> Result<Var, ModelError> {
        let expected = batch.rows * batch.cols;
        let got = self.tape.value(encoded).rows();
        if got != expected {
            return Err(ModelError::DimensionMismatch {
                op: "pool",
                expected,
                got,
            });
        }
        match strategy {
            PoolingStrategy::Cls => {
                let idx: Vec<usize> = (0..batch.rows).map(|b| b * batch.cols).collect();
                Ok(self.tape.gather_rows(encoded, &idx)?)
            }
            PoolingStrategy::Mean | PoolingStrategy::Max => {
                let spans = self.pool_spans(batch)?;
                match strategy {
                    PoolingStrategy::Mean => Ok(self.tape.mean_pool_rows(encoded, &spans)?),
                    _ => Ok(self.tape.max_pool_rows(encoded, &spans)?),
                }
            }
        }
    }

    /// Flat row indices each sentence pools over: unpadded positions, minus
    /// CLS and SEP when the config excludes specials.
    fn pool_spans(&self, batch: &TokenBatch) -> Result<Vec<Vec<usize>>, ModelError> {
        let exclude = self.model.config().pool_excludes_specials;
        let mut spans = Vec::with_capacity(batch.rows);
        for b in 0..batch.rows {
            let span: Vec<usize> = (0..batch.cols)
                .filter(|&j| {
                    if batch.masked(b, j) {
                        return false;
                    }
                    let id = batch.id(b, j);
                    !(exclude && (id == Vocab::CLS || id == Vocab::SEP))
                })
                .map(|j| b * batch.cols + j)
                .collect();
            if span.is_empty() {
                return Err(ModelError::EmptyPoolRow { row: b });
            }
            spans.push(span);
        }
        Ok(spans)
    }

    /// Applies the word-prediction head to pooled vectors `u`
    /// (`rows × d_model`): dense transform, GELU, layer norm, then the
    /// decoder matrix and output bias. Returns logits over the vocabulary.
    pub fn predict_logits(&mut self, u: Var) -> Result<Var, ModelError> {
        let d = self.model.config().d_model;
        let got = self.tape.value(u).cols();
        if got != d {
            return Err(ModelError::DimensionMismatch {
                op: "predict_logits",
                expected: d,
                got,
            });
        }
        let w = self.p("head.transform.w");
        let b = self.p("head.transform.b");
        let t = self.tape.matmul(u, w)?;
        let t = self.tape.add_bias(t, b)?;
        let t = self.tape.gelu(t)?;
        let gain = self.p("head.ln.gain");
        let bias = self.p("head.ln.bias");
        let t = self.tape.layer_norm(t, gain, bias, LAYER_NORM_EPS)?;

        let decoder = if self.model.config().tie_prediction_weights {
            self.p("token_embedding")
        } else {
            self.p("head.decoder")
        };
        let decoder_t = self.tape.transpose(decoder)?;
        let scores = self.tape.matmul(t, decoder_t)?;
        Ok(self.tape.add_bias(scores, self.p("head.bias"))?)
    }

    /// The training objective: encode, pool, predict, then the mean
    /// cross-entropy of each row's target headword.
    pub fn defsent_loss(
        &mut self,
        batch: &TokenBatch,
        strategy: PoolingStrategy,
    ) -> Result<Var, ModelError> {
        let targets: Vec<usize> = batch
            .targets
            .as_ref()
            .ok_or(ModelError::MissingTargets)?
            .iter()
            .map(|&t| t as usize)
            .collect();
        let encoded = self.encode(batch)?;
        let pooled = self.pool(encoded, batch, strategy)?;
        let logits = self.predict_logits(pooled)?;
        Ok(self.tape.cross_entropy_loss(logits, &targets)?)
    }

    /// Runs the backward pass from a scalar loss node.
    pub fn backward(&mut self, root: Var) -> Result<(), ModelError> {
        Ok(self.tape.backward(root)?)
    }

    /// Takes the accumulated gradient of every trainable parameter, keyed
    /// by name. Frozen parameters never appear.
    pub fn trainable_grads(&mut self) -> BTreeMap<String, Vec<T>> {
        let mut grads = BTreeMap::new();
        for (name, &var) in &self.leaves {
            if let Some(g) = self.tape.take_grad(var) {
                grads.insert(name.clone(), g);
            }
        }
        grads
    }
}
