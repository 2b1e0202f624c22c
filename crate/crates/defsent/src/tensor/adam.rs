//! Bias-corrected Adam over a named parameter collection.

use std::collections::BTreeMap;

use super::scalar::Scalar;
use super::{Tensor, TensorError};

/// Optimizer state: one first/second-moment pair per trainable parameter.
///
/// Moment buffers are allocated lazily on the first update that touches a
/// parameter, so frozen parameters never get optimizer state at all.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    t: u64,
    slots: BTreeMap<String, Slot<T>>,
}

#[derive(Debug, Clone)]
struct Slot<T: Scalar> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    /// State with the conventional hyperparameters β1=0.9, β2=0.999, ε=1e-8.
    pub fn new() -> Self {
        AdamState {
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Number of completed update steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Number of parameters holding moment buffers.
    pub fn tracked_parameters(&self) -> usize {
        self.slots.len()
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Applies one bias-corrected Adam update to every parameter named in
/// `grads`. Parameters whose tensor is not marked trainable are left
/// untouched. The step count increments exactly once per call.
pub fn adam_step<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TensorError> {
    if lr < 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "adam_step",
            detail: format!("learning rate must be non-negative, got {lr}"),
        });
    }
    state.t += 1;
    debug_assert!(state.t <= i32::MAX as u64);
    let lr = T::from_f64(lr);
    let one = T::one();
    let bc1 = one - state.beta1.powi(state.t as i32);
    let bc2 = one - state.beta2.powi(state.t as i32);
    for (name, grad) in grads {
        let param = params
            .get_mut(name)
            .ok_or_else(|| TensorError::MissingParameter { name: name.clone() })?;
        if !param.requires_grad() {
            continue;
        }
        if grad.len() != param.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: vec![grad.len()],
            });
        }
        let slot = state.slots.entry(name.clone()).or_insert_with(|| Slot {
            m: vec![T::zero(); grad.len()],
            v: vec![T::zero(); grad.len()],
        });
        if slot.m.len() != grad.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![slot.m.len()],
                rhs: vec![grad.len()],
            });
        }
        let data = param.data_mut();
        for (((p, &g), m), v) in data
            .iter_mut()
            .zip(grad)
            .zip(slot.m.iter_mut())
            .zip(slot.v.iter_mut())
        {
            *m = state.beta1 * *m + (one - state.beta1) * g;
            *v = state.beta2 * *v + (one - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Scales all gradients down so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. The squared norm accumulates in f64,
/// in parameter-name order, to keep the result deterministic and precise.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Vec<T>>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for grad in grads.values() {
        for &g in grad {
            let g = g.to_f64();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for grad in grads.values_mut() {
            for g in grad.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, trainable: bool) -> BTreeMap<String, Tensor<f64>> {
        let mut params = BTreeMap::new();
        params.insert(
            "w".to_string(),
            Tensor::new(vec![1], vec![value])
                .unwrap()
                .with_requires_grad(trainable),
        );
        params
    }

    #[test]
    fn zero_gradient_is_a_parameter_noop() {
        let mut params = one_param(0.75, true);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.0]);
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, 1e-2).unwrap();
        }
        assert_eq!(params["w"].data(), &[0.75], "zero grad must not move w");
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = one_param(1.0, true);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![3.0]);
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        // At t=1 the bias-corrected ratio m_hat/sqrt(v_hat) equals sign(g)
        // up to the epsilon perturbation of the denominator.
        let moved = 1.0 - params["w"].data()[0];
        assert!(
            (moved - 1e-3).abs() < 1e-8,
            "first step should move by about lr, moved {moved}"
        );
    }

    #[test]
    fn two_steps_match_scalar_reference_trace() {
        let mut params = one_param(0.5, true);
        let mut state = AdamState::new();
        let lr = 0.01;
        let gs = [0.3, -0.2];
        for g in gs {
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), vec![g]);
            adam_step(&mut params, &grads, &mut state, lr).unwrap();
        }

        // Hand-rolled scalar Adam, written independently of the tensor path.
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (i, g) in gs.into_iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let got = params["w"].data()[0];
        assert!(
            (got - w).abs() < 1e-12,
            "optimizer trace diverged: got {got}, reference {w}"
        );
    }

    #[test]
    fn frozen_parameters_are_untouched_and_get_no_state() {
        let mut params = one_param(0.25, false);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params["w"].data(), &[0.25]);
        assert_eq!(state.tracked_parameters(), 0);
    }

    #[test]
    fn unknown_parameter_name_is_an_error() {
        let mut params = one_param(0.0, true);
        let mut grads = BTreeMap::new();
        grads.insert("nope".to_string(), vec![1.0]);
        let mut state = AdamState::new();
        let err = adam_step(&mut params, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, TensorError::MissingParameter { .. }));
    }

    #[test]
    fn gradient_shape_mismatch_is_an_error() {
        let mut params = one_param(0.0, true);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0, 2.0]);
        let mut state = AdamState::new();
        let err = adam_step(&mut params, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn clip_rescales_joint_norm_and_reports_original() {
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        grads.insert("a".to_string(), vec![3.0]);
        grads.insert("b".to_string(), vec![4.0]);
        let norm = clip_grad_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = grads.values().flatten().map(|g| g * g).sum();
        assert!((clipped.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_below_threshold_leaves_gradients_alone() {
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        grads.insert("a".to_string(), vec![0.3, 0.4]);
        let norm = clip_grad_norm(&mut grads, 10.0);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(grads["a"], vec![0.3, 0.4]);
    }
}
