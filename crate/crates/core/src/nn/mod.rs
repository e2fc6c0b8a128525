//! Minimal dense-network numerical core.
//!
//! Everything here works on row batches stored in [`Matrix`] (one instance
//! per row). Backward passes are written out by hand; [`gradcheck`] holds the
//! central-difference oracle that the rest of the crate tests against.

mod adam;
mod batchnorm;
mod dense;
pub mod gradcheck;
mod grl;
mod loss;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchStats};
pub use dense::{Activation, DenseCache, DenseGrads, DenseLayer};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use grl::{grl_backward, grl_forward};
pub use loss::{cross_entropy_loss, mse_loss};
pub use matrix::Matrix;

/// Whether a forward pass uses batch statistics (and stochastic
/// regularisers) or the frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
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
