//! Reverse-mode automatic differentiation on a recorded tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Each
//! operation appends a node and returns a [`Var`] handle; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients into every node that
//! needs them. A node needs gradients only if one of its inputs does, so a
//! frozen subgraph (all leaves with `requires_grad == false`) is skipped
//! entirely on the way back.
//!
//! All reductions accumulate sequentially in index order; identical inputs
//! produce bitwise-identical outputs.

use rand::Rng;

use super::scalar::Scalar;
use super::{Tensor, TensorError};

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    Transpose {
        a: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: T,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        a: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    MeanPoolRows {
        a: Var,
        spans: Vec<Vec<usize>>,
    },
    MaxPoolRows {
        a: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        a: Var,
        kept: Vec<bool>,
        scale: T,
    },
    SumAll {
        a: Var,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-owner autodiff tape for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The tensor value held by a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Convenience accessor for a node known to hold a single element.
    pub fn scalar_value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of a node, available after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Removes and returns the gradient of a node.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        let node = &mut self.nodes[v.0];
        let g = node.value.grad().map(|g| g.to_vec());
        node.value.set_grad(None);
        g
    }

    /// Registers an input tensor. Gradients flow into the node only when the
    /// tensor was marked with `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let needs = t.requires_grad();
        let mut value = t.clone();
        value.set_grad(None);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a constant input that never receives gradients.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        let mut value = t.clone();
        value.set_grad(None);
        value.set_requires_grad(false);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        opname: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var, TensorError> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: opname });
        }
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product of the canonical 2-D views: `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = (self.val(a).rows(), self.val(a).cols());
        let (kb, n) = (self.val(b).rows(), self.val(b).cols());
        if k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(b).shape().to_vec(),
            });
        }
        let av = self.val(a).data();
        let bv = self.val(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &x) in arow.iter().enumerate() {
                let brow = &bv[l * n..(l + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", vec![m, n], out, Op::Matmul { a, b }, needs)
    }

    /// Transpose of the canonical 2-D view.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        let av = self.val(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push("transpose", vec![c, r], out, Op::Transpose { a }, needs)
    }

    /// Elementwise sum of two tensors with identical 2-D views.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    /// Elementwise product of two tensors with identical 2-D views.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn binary_elementwise(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (ra, ca) = (self.val(a).rows(), self.val(a).cols());
        let (rb, cb) = (self.val(b).rows(), self.val(b).cols());
        if (ra, ca) != (rb, cb) {
            return Err(TensorError::ShapeMismatch {
                op: opname,
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(b).shape().to_vec(),
            });
        }
        let out = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(opname, shape, out, op, needs)
    }

    /// Adds a length-`n` bias vector to every row of an `[r×n]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        if self.val(bias).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(bias).shape().to_vec(),
            });
        }
        let av = self.val(a).data();
        let bv = self.val(bias).data();
        let mut out = Vec::with_capacity(av.len());
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] + bv[j]);
            }
        }
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(bias);
        self.push("add_bias", shape, out, Op::AddBias { a, bias }, needs)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let cv = T::from_f64(c);
        let out = self.val(a).data().iter().map(|&x| x * cv).collect();
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a);
        self.push("scale", shape, out, Op::Scale { a, c: cv }, needs)
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let c0 = T::from_f64(GELU_C0);
        let c1 = T::from_f64(GELU_C1);
        let half = T::from_f64(0.5);
        let out = self
            .val(a)
            .data()
            .iter()
            .map(|&x| {
                let inner = c0 * (x + c1 * x * x * x);
                half * x * (T::one() + inner.tanh())
            })
            .collect();
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a);
        self.push("gelu", shape, out, Op::Gelu { a }, needs)
    }

    /// Per-row normalization to mean 0 / variance 1, then affine gain and
    /// bias. `gain` and `bias` have the row width of `a`.
    pub fn layer_norm(
        &mut self,
        a: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        if self.val(gain).len() != c || self.val(bias).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(gain).shape().to_vec(),
            });
        }
        let av = self.val(a).data();
        let gv = self.val(gain).data();
        let bv = self.val(bias).data();
        let inv_c = T::from_f64(1.0 / c as f64);
        let epsv = T::from_f64(eps);
        let mut out = Vec::with_capacity(av.len());
        let mut means = Vec::with_capacity(r);
        let mut inv_stds = Vec::with_capacity(r);
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() * inv_c;
            let inv_std = T::one() / (var + epsv).sqrt();
            means.push(mean);
            inv_stds.push(inv_std);
            for (j, &x) in row.iter().enumerate() {
                out.push((x - mean) * inv_std * gv[j] + bv[j]);
            }
        }
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                a,
                gain,
                bias,
                mean: means,
                inv_std: inv_stds,
            },
            needs,
        )
    }

    /// Softmax along an axis of the 2-D view (0 = down columns, 1 = along
    /// rows), computed with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        if axis > 1 {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                detail: format!("axis must be 0 or 1 for a 2-D view, got {axis}"),
            });
        }
        if !self.val(a).data().iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        let av = self.val(a).data();
        let mut out = vec![T::zero(); av.len()];
        let (slices, len, stride, base) = match axis {
            1 => (r, c, 1, c),
            _ => (c, r, c, 1),
        };
        for s in 0..slices {
            let at = |i: usize| s * base + i * stride;
            let mut max = av[at(0)];
            for i in 1..len {
                max = max.max(av[at(i)]);
            }
            let mut total = T::zero();
            for i in 0..len {
                let e = (av[at(i)] - max).exp();
                out[at(i)] = e;
                total += e;
            }
            for i in 0..len {
                out[at(i)] /= total;
            }
        }
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a);
        self.push("softmax", shape, out, Op::Softmax { a, axis }, needs)
    }

    /// Mean over the batch of `-log softmax(logits)[target]`, as a scalar.
    pub fn cross_entropy_loss(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, TensorError> {
        let (r, c) = (self.val(logits).rows(), self.val(logits).cols());
        if targets.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_loss",
                lhs: self.val(logits).shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if r == 0 {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy_loss",
                detail: "empty batch".to_string(),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy_loss",
                index: bad,
                bound: c,
            });
        }
        if !self.val(logits).data().iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite {
                op: "cross_entropy_loss",
            });
        }
        let lv = self.val(logits).data();
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        for i in 0..r {
            let row = &lv[i * c..(i + 1) * c];
            let prow = &mut probs[i * c..(i + 1) * c];
            let mut max = row[0];
            for &x in &row[1..] {
                max = max.max(x);
            }
            let mut denom = T::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                let e = (x - max).exp();
                *p = e;
                denom += e;
            }
            for p in prow.iter_mut() {
                *p /= denom;
            }
            total += denom.ln() + max - row[targets[i]];
        }
        let loss = total / T::from_f64(r as f64);
        let needs = self.needs(logits);
        self.push(
            "cross_entropy_loss",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        )
    }

    /// Gathers rows of the 2-D view: `out[r] = a[idx[r]]`. Serves as the
    /// embedding lookup and as the selector for masked or pooled positions.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        if idx.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                detail: "empty index list".to_string(),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                bound: r,
            });
        }
        let av = self.val(a).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        let needs = self.needs(a);
        self.push(
            "gather_rows",
            vec![idx.len(), c],
            out,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            needs,
        )
    }

    /// Contiguous column block `[start, start+len)` of the 2-D view.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        if len == 0 || start + len > c {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let av = self.val(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(a);
        self.push(
            "slice_cols",
            vec![r, len],
            out,
            Op::SliceCols { a, start },
            needs,
        )
    }

    /// Concatenates tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_cols",
                detail: "no parts".to_string(),
            });
        }
        let r = self.val(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.val(p).rows() != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.val(parts[0]).shape().to_vec(),
                    rhs: self.val(p).shape().to_vec(),
                });
            }
            total += self.val(p).cols();
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let pc = self.val(p).cols();
                out.extend_from_slice(&self.val(p).data()[i * pc..(i + 1) * pc]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat_cols",
            vec![r, total],
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    /// Contiguous row block `[start, start+len)` of the 2-D view.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        if len == 0 || start + len > r {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let out = self.val(a).data()[start * c..(start + len) * c].to_vec();
        let needs = self.needs(a);
        self.push(
            "slice_rows",
            vec![len, c],
            out,
            Op::SliceRows { a, start },
            needs,
        )
    }

    /// Stacks tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_rows",
                detail: "no parts".to_string(),
            });
        }
        let c = self.val(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            if self.val(p).cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.val(parts[0]).shape().to_vec(),
                    rhs: self.val(p).shape().to_vec(),
                });
            }
            rows += self.val(p).rows();
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.val(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat_rows",
            vec![rows, c],
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    /// Averages row groups of the 2-D view: `out[i] = mean(a[spans[i]])`.
    pub fn mean_pool_rows(&mut self, a: Var, spans: &[Vec<usize>]) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        Self::validate_spans("mean_pool_rows", spans, r)?;
        let av = self.val(a).data();
        let mut out = vec![T::zero(); spans.len() * c];
        for (i, span) in spans.iter().enumerate() {
            let orow = &mut out[i * c..(i + 1) * c];
            for &p in span {
                for (o, &x) in orow.iter_mut().zip(&av[p * c..(p + 1) * c]) {
                    *o += x;
                }
            }
            let inv = T::from_f64(1.0 / span.len() as f64);
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let needs = self.needs(a);
        self.push(
            "mean_pool_rows",
            vec![spans.len(), c],
            out,
            Op::MeanPoolRows {
                a,
                spans: spans.to_vec(),
            },
            needs,
        )
    }

    /// Elementwise maximum over row groups of the 2-D view. Ties resolve to
    /// the earliest row in the span.
    pub fn max_pool_rows(&mut self, a: Var, spans: &[Vec<usize>]) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        Self::validate_spans("max_pool_rows", spans, r)?;
        let av = self.val(a).data();
        let mut out = Vec::with_capacity(spans.len() * c);
        let mut argmax = Vec::with_capacity(spans.len() * c);
        for span in spans {
            for j in 0..c {
                let mut best = av[span[0] * c + j];
                let mut best_row = span[0];
                for &p in &span[1..] {
                    let x = av[p * c + j];
                    if x > best {
                        best = x;
                        best_row = p;
                    }
                }
                out.push(best);
                argmax.push(best_row * c + j);
            }
        }
        let needs = self.needs(a);
        self.push(
            "max_pool_rows",
            vec![spans.len(), c],
            out,
            Op::MaxPoolRows { a, argmax },
            needs,
        )
    }

    fn validate_spans(
        opname: &'static str,
        spans: &[Vec<usize>],
        rows: usize,
    ) -> Result<(), TensorError> {
        if spans.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: opname,
                detail: "no spans".to_string(),
            });
        }
        for span in spans {
            if span.is_empty() {
                return Err(TensorError::InvalidArgument {
                    op: opname,
                    detail: "empty span".to_string(),
                });
            }
            if let Some(&bad) = span.iter().find(|&&p| p >= rows) {
                return Err(TensorError::IndexOutOfRange {
                    op: opname,
                    index: bad,
                    bound: rows,
                });
            }
        }
        Ok(())
    }

    /// Inverted dropout: each element is kept with probability `1 - p` and
    /// scaled by `1/(1-p)`, so the expected value is unchanged.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("probability must be in [0, 1), got {p}"),
            });
        }
        let av = self.val(a).data();
        let scale = T::from_f64(1.0 / (1.0 - p));
        let kept: Vec<bool> = (0..av.len()).map(|_| rng.random::<f64>() >= p).collect();
        let out = av
            .iter()
            .zip(&kept)
            .map(|(&x, &k)| if k { x * scale } else { T::zero() })
            .collect();
        let shape = self.val(a).shape().to_vec();
        let needs = self.needs(a);
        self.push("dropout", shape, out, Op::Dropout { a, kept, scale }, needs)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.val(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push("sum_all", vec![1], vec![total], Op::SumAll { a }, needs)
    }

    /// Accumulates gradients for every node reachable from `root` that needs
    /// them, storing the result in each node's tensor. `root` must hold a
    /// single element.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.val(root).len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.val(root).shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads);
            self.nodes[i].value.set_grad(Some(gout));
        }
        Ok(())
    }

    fn slot<'g>(
        nodes: &[Node<T>],
        grads: &'g mut [Option<Vec<T>>],
        v: Var,
    ) -> Option<&'g mut Vec<T>> {
        if !nodes[v.0].needs_grad {
            return None;
        }
        let len = nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out_val = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let n = nodes[b.0].value.cols();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (l, d) in darow.iter_mut().enumerate() {
                            let brow = &bv[l * n..(l + 1) * n];
                            let mut s = T::zero();
                            for (&g, &y) in grow.iter().zip(brow) {
                                s += g * y;
                            }
                            *d += s;
                        }
                    }
                }
                if let Some(db) = Self::slot(nodes, grads, *b) {
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        let grow = &gout[i * n..(i + 1) * n];
                        for (l, &x) in arow.iter().enumerate() {
                            let dbrow = &mut db[l * n..(l + 1) * n];
                            for (d, &g) in dbrow.iter_mut().zip(grow) {
                                *d += x * g;
                            }
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                let (r, c) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += gout[j * r + i];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for &v in [a, b].into_iter() {
                    if let Some(dv) = Self::slot(nodes, grads, v) {
                        for (d, &g) in dv.iter_mut().zip(gout) {
                            *d += g;
                        }
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for (d, &g) in da.iter_mut().zip(gout) {
                        *d += g;
                    }
                }
                let c = nodes[bias.0].value.len();
                if let Some(db) = Self::slot(nodes, grads, *bias) {
                    for (pos, &g) in gout.iter().enumerate() {
                        db[pos % c] += g;
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for ((d, &g), &y) in da.iter_mut().zip(gout).zip(bv) {
                        *d += g * y;
                    }
                }
                if let Some(db) = Self::slot(nodes, grads, *b) {
                    for ((d, &g), &x) in db.iter_mut().zip(gout).zip(av) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for (d, &g) in da.iter_mut().zip(gout) {
                        *d += g * *c;
                    }
                }
            }
            Op::Gelu { a } => {
                let c0 = T::from_f64(GELU_C0);
                let c1 = T::from_f64(GELU_C1);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                let av = nodes[a.0].value.data();
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for ((d, &g), &x) in da.iter_mut().zip(gout).zip(av) {
                        let inner = c0 * (x + c1 * x * x * x);
                        let t = inner.tanh();
                        let dinner = c0 * (T::one() + three * c1 * x * x);
                        let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
                        *d += g * deriv;
                    }
                }
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                mean,
                inv_std,
            } => {
                let (r, c) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let av = nodes[a.0].value.data();
                let gv = nodes[gain.0].value.data();
                let inv_c = T::from_f64(1.0 / c as f64);
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for i in 0..r {
                        let row = &av[i * c..(i + 1) * c];
                        let grow = &gout[i * c..(i + 1) * c];
                        let darow = &mut da[i * c..(i + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for (j, (&g, &x)) in grow.iter().zip(row).enumerate() {
                            let xhat = (x - mean[i]) * inv_std[i];
                            let dxhat = g * gv[j];
                            m1 += dxhat;
                            m2 += dxhat * xhat;
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        for (j, (d, (&g, &x))) in
                            darow.iter_mut().zip(grow.iter().zip(row)).enumerate()
                        {
                            let xhat = (x - mean[i]) * inv_std[i];
                            let dxhat = g * gv[j];
                            *d += inv_std[i] * (dxhat - m1 - xhat * m2);
                        }
                    }
                }
                if let Some(dg) = Self::slot(nodes, grads, *gain) {
                    for i in 0..r {
                        for j in 0..c {
                            let xhat = (av[i * c + j] - mean[i]) * inv_std[i];
                            dg[j] += gout[i * c + j] * xhat;
                        }
                    }
                }
                if let Some(db) = Self::slot(nodes, grads, *bias) {
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += gout[i * c + j];
                        }
                    }
                }
            }
            Op::Softmax { a, axis } => {
                let (r, c) = (out_val.rows(), out_val.cols());
                let sv = out_val.data();
                let (slices, len, stride, base) = match axis {
                    1 => (r, c, 1, c),
                    _ => (c, r, c, 1),
                };
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for s in 0..slices {
                        let at = |i: usize| s * base + i * stride;
                        let mut dot = T::zero();
                        for i in 0..len {
                            dot += gout[at(i)] * sv[at(i)];
                        }
                        for i in 0..len {
                            let p = at(i);
                            da[p] += sv[p] * (gout[p] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = nodes[logits.0].value.cols();
                let g0 = gout[0];
                let inv_b = T::from_f64(1.0 / targets.len() as f64);
                if let Some(dl) = Self::slot(nodes, grads, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        let prow = &probs[i * c..(i + 1) * c];
                        let drow = &mut dl[i * c..(i + 1) * c];
                        for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let indicator = if j == t { T::one() } else { T::zero() };
                            *d += g0 * (p - indicator) * inv_b;
                        }
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                let c = out_val.cols();
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for (r, &src) in idx.iter().enumerate() {
                        let grow = &gout[r * c..(r + 1) * c];
                        let darow = &mut da[src * c..(src + 1) * c];
                        for (d, &g) in darow.iter_mut().zip(grow) {
                            *d += g;
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let src_c = nodes[a.0].value.cols();
                let (r, c) = (out_val.rows(), out_val.cols());
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for i in 0..r {
                        let grow = &gout[i * c..(i + 1) * c];
                        let darow = &mut da[i * src_c + start..i * src_c + start + c];
                        for (d, &g) in darow.iter_mut().zip(grow) {
                            *d += g;
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = out_val.rows();
                let total = out_val.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.cols();
                    if let Some(dp) = Self::slot(nodes, grads, p) {
                        for i in 0..rows {
                            let grow = &gout[i * total + offset..i * total + offset + pc];
                            let drow = &mut dp[i * pc..(i + 1) * pc];
                            for (d, &g) in drow.iter_mut().zip(grow) {
                                *d += g;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceRows { a, start } => {
                let c = out_val.cols();
                let len = out_val.rows();
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    let block = &mut da[start * c..(start + len) * c];
                    for (d, &g) in block.iter_mut().zip(gout) {
                        *d += g;
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let c = out_val.cols();
                let mut offset = 0;
                for &p in parts {
                    let pr = nodes[p.0].value.rows();
                    if let Some(dp) = Self::slot(nodes, grads, p) {
                        let block = &gout[offset * c..(offset + pr) * c];
                        for (d, &g) in dp.iter_mut().zip(block) {
                            *d += g;
                        }
                    }
                    offset += pr;
                }
            }
            Op::MeanPoolRows { a, spans } => {
                let c = out_val.cols();
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for (i, span) in spans.iter().enumerate() {
                        let grow = &gout[i * c..(i + 1) * c];
                        let inv = T::from_f64(1.0 / span.len() as f64);
                        for &p in span {
                            let darow = &mut da[p * c..(p + 1) * c];
                            for (d, &g) in darow.iter_mut().zip(grow) {
                                *d += g * inv;
                            }
                        }
                    }
                }
            }
            Op::MaxPoolRows { a, argmax } => {
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for (pos, &src) in argmax.iter().enumerate() {
                        da[src] += gout[pos];
                    }
                }
            }
            Op::Dropout { a, kept, scale } => {
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for ((d, &g), &k) in da.iter_mut().zip(gout).zip(kept) {
                        if k {
                            *d += g * *scale;
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                let g0 = gout[0];
                if let Some(da) = Self::slot(nodes, grads, *a) {
                    for d in da.iter_mut() {
                        *d += g0;
                    }
                }
            }
        }
    }
}
