//! Finite-difference gradient verification.
//!
//! The helpers here run a loss function twice per parameter element with a
//! symmetric perturbation, so they are independent of the tape's analytic
//! backward pass and serve as its oracle. Always verify in f64: the f32
//! training precision drowns the perturbation in rounding noise.

use super::scalar::Scalar;
use super::{Tensor, TensorError};

/// Central-difference gradient of `loss` with respect to every element of
/// every tensor in `params`, using perturbation size `h`.
pub fn numerical_grad<F>(
    params: &[Tensor<f64>],
    h: f64,
    mut loss: F,
) -> Result<Vec<Vec<f64>>, TensorError>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64, TensorError>,
{
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let n = params[pi].len();
        let mut grad = Vec::with_capacity(n);
        for ei in 0..n {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = loss(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = loss(&work)?;
            work[pi].data_mut()[ei] = orig;
            grad.push((plus - minus) / (2.0 * h));
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Relative error between an analytic and a numeric gradient element. The
/// denominator is floored so that agreement on near-zero gradients is judged
/// in absolute terms instead of dividing noise by noise.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest [`rel_err`] across two gradient slices of equal length.
pub fn max_rel_err<T: Scalar>(analytic: &[T], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a.to_f64(), n, floor))
        .fold(0.0, f64::max)
}
