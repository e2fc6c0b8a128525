//! Cross-platform domain adaptation for multi-modal satisfaction regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense layers, batch normalisation, losses, gradient reversal,
//!   Adam and a finite-difference gradient checker, all on 64-bit floats.
//! - [`data`]: a seeded multi-platform corpus generator with controllable
//!   shift, chronological splits, training-mean imputation and diagnostics.
//! - [`embed`]: the frozen text-embedding interface and a signed
//!   feature-hashing embedder with an on-disk cache.
//! - [`model`]: gated text/behavior fusion, the adversarial platform
//!   discriminator and the training loop.
//! - [`calib`]: per-platform affine rating calibration (moment matching and
//!   few-shot fitting).
//! - [`eval`]: metrics, baselines, protocols, sweeps and reports.
//! - [`config`]: the run configuration consumed by the command-line tool.

pub mod calib;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod model;
pub mod nn;
mod wire;

pub use error::{Error, Result};
