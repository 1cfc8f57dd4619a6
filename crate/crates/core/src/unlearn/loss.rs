//! Squared-error losses on target-layer activations.
//!
//! Both terms use the mean over samples and the mean over dimensions, so `α`
//! and the target coefficients do not scale with `d` or the batch size.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Mean squared distance of each row of `activation` to the broadcast
/// `target`, with its gradient w.r.t. `activation`.
pub fn forget_loss_with_grad(activation: &Matrix, target: &[f64]) -> Result<(f64, Matrix)> {
    if activation.cols() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "forget_loss",
            left: activation.shape(),
            right: (1, target.len()),
        });
    }
    if activation.rows() == 0 {
        return Err(Error::Empty("forget loss on an empty batch"));
    }
    let d = target.len();
    let count = activation.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(activation.len());
    for (i, &h) in activation.data().iter().enumerate() {
        let diff = h - target[i % d];
        loss += diff * diff;
        grad.push(2.0 * diff / count);
    }
    Ok((loss / count, Matrix::from_vec(activation.rows(), d, grad)?))
}

pub fn forget_loss(activation: &Matrix, target: &[f64]) -> Result<f64> {
    forget_loss_with_grad(activation, target).map(|(l, _)| l)
}

/// Mean squared distance between updated and frozen activations on the same
/// batch, with its gradient w.r.t. the updated activations.
pub fn retain_loss_with_grad(
    activation: &Matrix,
    frozen_activation: &Matrix,
) -> Result<(f64, Matrix)> {
    if activation.shape() != frozen_activation.shape() {
        return Err(Error::ShapeMismatch {
            op: "retain_loss",
            left: activation.shape(),
            right: frozen_activation.shape(),
        });
    }
    if activation.is_empty() {
        return Err(Error::Empty("retain loss on an empty batch"));
    }
    let count = activation.len() as f64;
    let mut loss = 0.0;
    let grad = activation
        .data()
        .iter()
        .zip(frozen_activation.data())
        .map(|(h, h0)| {
            let diff = h - h0;
            loss += diff * diff;
            2.0 * diff / count
        })
        .collect();
    Ok((
        loss / count,
        Matrix::from_vec(activation.rows(), activation.cols(), grad)?,
    ))
}

pub fn retain_loss(activation: &Matrix, frozen_activation: &Matrix) -> Result<f64> {
    retain_loss_with_grad(activation, frozen_activation).map(|(l, _)| l)
}
