use super::Matrix;

/// Gradient reversal: the forward pass is the identity.
#[inline]
pub fn grl_forward(input: &Matrix) -> Matrix {
    input.clone()
}

/// Gradient reversal: the backward pass multiplies by `−λ`.
pub fn grl_backward(upstream: &Matrix, lambda: f64) -> Matrix {
    upstream.scale(-lambda)
}
