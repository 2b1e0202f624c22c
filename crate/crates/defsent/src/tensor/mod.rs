//! Dense tensors, reverse-mode autodiff, the Adam optimizer, and the
//! warmup learning-rate schedule.
//!
//! Everything the encoder needs and nothing more: tensors are row-major
//! value types, differentiable operations run on a [`Tape`], and reductions
//! accumulate sequentially in index order so that a fixed seed and fixed
//! inputs reproduce bitwise-identical results.

mod adam;
mod check;
mod scalar;
mod schedule;
mod tape;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use check::{max_rel_err, numerical_grad, rel_err};
pub use scalar::Scalar;
pub use schedule::{lr_at, Decay, LrSchedule};
pub use tape::{Tape, Var};

use std::fmt;

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Data length does not match the product of the shape.
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    /// An index argument (class target, row index, ...) is out of range.
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    /// An operation produced or received a NaN or infinite value.
    NonFinite { op: &'static str },
    /// Backward was called on a node that is not a single-element scalar.
    NotScalar { shape: Vec<usize> },
    /// An argument is outside the operation's domain.
    InvalidArgument { op: &'static str, detail: String },
    /// A gradient was supplied for a parameter name the optimizer cannot find.
    MissingParameter { name: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::ShapeDataMismatch { shape, len } => {
                write!(f, "shape {shape:?} does not match data length {len}")
            }
            TensorError::IndexOutOfRange { op, index, bound } => {
                write!(f, "{op}: index {index} out of range (bound {bound})")
            }
            TensorError::NonFinite { op } => {
                write!(f, "{op}: non-finite value encountered")
            }
            TensorError::NotScalar { shape } => {
                write!(f, "backward root must be a scalar, got shape {shape:?}")
            }
            TensorError::InvalidArgument { op, detail } => {
                write!(f, "{op}: {detail}")
            }
            TensorError::MissingParameter { name } => {
                write!(f, "no parameter named {name:?}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// A dense row-major tensor.
///
/// The shape is an arbitrary list of positive dimensions, but every tape
/// operation works on the canonical 2-D view: the last dimension is the
/// column count and the product of the leading dimensions is the row count.
/// A `[B, L, d]` activation therefore flows through row-wise operations as a
/// `(B·L) × d` matrix without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating the shape/data agreement and that every
    /// value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidArgument {
                op: "tensor",
                detail: format!("dimensions must be positive, got {shape:?}"),
            });
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Internal constructor for values already validated by an operation.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape, vec![T::zero(); n])
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column count of the canonical 2-D view (the last dimension).
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Row count of the canonical 2-D view (product of leading dimensions).
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    /// Row `r` of the canonical 2-D view.
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Marks the tensor as a trainable parameter (or freezes it again).
    /// Frozen tensors never accumulate gradients on a tape and the optimizer
    /// leaves them untouched.
    pub fn set_requires_grad(&mut self, requires: bool) -> &mut Self {
        self.requires_grad = requires;
        self
    }

    pub fn with_requires_grad(mut self, requires: bool) -> Self {
        self.requires_grad = requires;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Option<Vec<T>>) {
        debug_assert!(grad.as_ref().is_none_or(|g| g.len() == self.data.len()));
        self.grad = grad;
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if shape.is_empty() || expect != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Converts every element, dropping any gradient. Used to move models
    /// between the f32 training path and the f64 gradient-check path.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64(v.to_f64())).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}
