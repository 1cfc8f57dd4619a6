use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Central-difference gradient of `f` at `params`, one entry at a time.
pub fn finite_diff_gradient<F>(mut f: F, params: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (rows, cols) = params.shape();
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let original = params.get(row, col);
            probe.set(row, col, original + h)?;
            let plus = f(&probe);
            probe.set(row, col, original - h)?;
            let minus = f(&probe);
            probe.set(row, col, original)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteEvaluation { row, col });
            }
            grad.push((plus - minus) / (2.0 * h));
        }
    }
    Matrix::from_vec(rows, cols, grad)
}

/// Largest entrywise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> Result<f64> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::ShapeMismatch {
            op: "max_relative_error",
            left: analytic.shape(),
            right: numeric.shape(),
        });
    }
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}
