//! Elementwise and row-wise layer primitives, each paired with its analytic
//! backward. Backwards take the forward output (or input, for ReLU) rather
//! than recomputing it.

use super::Matrix;
use crate::error::Result;

pub fn tanh_elem(a: &Matrix) -> Matrix {
    a.map(f64::tanh)
}

/// `grad_in = grad_out ⊙ (1 − out²)`
pub fn tanh_backward(out: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    out.zip_map(grad_out, |y, g| g * (1.0 - y * y))
}

pub fn relu_elem(a: &Matrix) -> Matrix {
    a.map(relu)
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Pass-through where the forward input was strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward(input: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_elem(a: &Matrix) -> Matrix {
    a.map(sigmoid)
}

pub fn sigmoid_backward(out: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    out.zip_map(grad_out, |y, g| g * y * (1.0 - y))
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Backward of `log_softmax_rows` given its output:
/// `grad_in = grad_out − softmax · Σ_row grad_out`.
pub fn log_softmax_backward(out: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    out.same_shape(grad_out, "log_softmax_backward")?;
    let mut grad = grad_out.clone();
    for r in 0..out.rows() {
        let total: f64 = grad_out.row(r).iter().sum();
        for (g, &y) in grad.row_mut(r).iter_mut().zip(out.row(r)) {
            *g -= y.exp() * total;
        }
    }
    Ok(grad)
}

/// Gradient reversal, backward half: the forward pass is the identity.
pub fn grl_backward(upstream: &Matrix, mu: f64) -> Matrix {
    upstream.map(|g| -mu * g)
}
