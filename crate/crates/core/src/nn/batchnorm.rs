use super::{Matrix, Mode};
use crate::{Error, Result};

/// Per-feature batch normalisation with learned affine parameters and
/// exponential-moving-average running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight kept on the old running value at each update.
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Batch statistics observed in a train-mode forward pass, applied to the
/// running averages with [`BatchNorm::update_running`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance.
    pub var: Vec<f64>,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Forward pass. Train mode returns the batch statistics for the caller
    /// to fold into the running averages; the layer itself is not mutated.
    pub fn forward(&self, input: &Matrix, mode: Mode) -> Result<(Matrix, BatchNormCache, Option<BatchStats>)> {
        let f = self.features();
        if input.cols() != f {
            return Err(Error::shape(
                "batchnorm_forward",
                format!("{f} features"),
                format!("input {}x{}", input.rows(), input.cols()),
            ));
        }
        let n = input.rows();
        let (mean, var_biased, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batchnorm in train mode needs a batch of at least 2 rows, got {n}"
                    )));
                }
                let mean: Vec<f64> = input.col_sums().iter().map(|s| s / n as f64).collect();
                let mut sq = vec![0.0; f];
                for i in 0..n {
                    for ((acc, &x), &m) in sq.iter_mut().zip(input.row(i)).zip(&mean) {
                        let d = x - m;
                        *acc += d * d;
                    }
                }
                let var_biased: Vec<f64> = sq.iter().map(|s| s / n as f64).collect();
                let var_unbiased = sq.iter().map(|s| s / (n - 1) as f64).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var_unbiased,
                };
                (mean, var_biased, Some(stats))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut normalized = Matrix::zeros(n, f);
        let mut output = Matrix::zeros(n, f);
        for i in 0..n {
            let x = input.row(i);
            let xn = normalized.row_mut(i);
            for j in 0..f {
                xn[j] = (x[j] - mean[j]) * inv_std[j];
            }
            let out = output.row_mut(i);
            for j in 0..f {
                out[j] = self.gamma[j] * xn[j] + self.beta[j];
            }
        }
        let cache = BatchNormCache {
            normalized,
            inv_std,
            mode,
        };
        Ok((output, cache, stats))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Returns `(input_grad, gamma_grad, beta_grad)`.
    pub fn backward(&self, cache: &BatchNormCache, upstream: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
        if upstream.shape() != cache.normalized.shape() {
            return Err(Error::shape(
                "batchnorm_backward",
                format!("{}x{}", cache.normalized.rows(), cache.normalized.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let (n, f) = upstream.shape();
        let mut dgamma = vec![0.0; f];
        let dbeta = upstream.col_sums();
        for i in 0..n {
            for ((dg, &g), &xn) in dgamma.iter_mut().zip(upstream.row(i)).zip(cache.normalized.row(i)) {
                *dg += g * xn;
            }
        }
        let mut dx = Matrix::zeros(n, f);
        match cache.mode {
            Mode::Eval => {
                for i in 0..n {
                    let up = upstream.row(i);
                    let out = dx.row_mut(i);
                    for j in 0..f {
                        out[j] = up[j] * self.gamma[j] * cache.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                // dx = γ·σ⁻¹/n · (n·dy − Σdy − x̂·Σ(dy·x̂))
                let nf = n as f64;
                for i in 0..n {
                    let up = upstream.row(i);
                    let xn = cache.normalized.row(i);
                    let out = dx.row_mut(i);
                    for j in 0..f {
                        out[j] = self.gamma[j] * cache.inv_std[j] / nf
                            * (nf * up[j] - dbeta[j] - xn[j] * dgamma[j]);
                    }
                }
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}
