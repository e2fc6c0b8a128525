use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fingerprint::derive_seed;
use crate::model::{predict_fused, predict_platform_logits, Architecture, Dataset, ModelParams};
use crate::nn::{cross_entropy_loss, Activation, AdamConfig, AdamState, DenseLayer, Matrix};
use crate::{Error, Result};

/// Platform-identification accuracy of a classifier on held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformAccuracy {
    pub accuracy: f64,
    /// Uniform guessing rate, one over the number of platforms.
    pub chance: f64,
    pub per_platform: Vec<f64>,
    pub n: usize,
}

/// Training schedule for a fresh platform probe on frozen representations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 1e-3,
            batch_size: 256,
            hidden: 128,
            seed: 0,
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn score(logits: &Matrix, labels: &[usize], platforms: usize) -> Result<PlatformAccuracy> {
    if labels.is_empty() {
        return Err(Error::Empty("held-out rows"));
    }
    let mut hits = vec![0usize; platforms];
    let mut counts = vec![0usize; platforms];
    for (i, &p) in labels.iter().enumerate() {
        counts[p] += 1;
        if argmax(logits.row(i)) == p {
            hits[p] += 1;
        }
    }
    let n = labels.len();
    let per_platform = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { f64::NAN } else { h as f64 / c as f64 })
        .collect();
    Ok(PlatformAccuracy {
        accuracy: hits.iter().sum::<usize>() as f64 / n as f64,
        chance: 1.0 / counts.len() as f64,
        per_platform,
        n,
    })
}

/// Accuracy of the model's own platform discriminator on `idx`.
pub fn discriminator_accuracy(
    params: &ModelParams,
    data: &Dataset,
    idx: &[usize],
    arch: Architecture,
) -> Result<PlatformAccuracy> {
    let logits = predict_platform_logits(params, &data.batch(idx), arch)?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.platform[i]).collect();
    score(&logits, &labels, params.dims.platforms)
}

/// Trains a fresh discriminator (same shape as the model's) on frozen fused
/// representations of `train_idx` and scores it on `test_idx`.
pub fn probe_accuracy(
    params: &ModelParams,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    arch: Architecture,
    config: &ProbeConfig,
) -> Result<PlatformAccuracy> {
    if train_idx.is_empty() {
        return Err(Error::Empty("probe training rows"));
    }
    if config.batch_size == 0 || config.hidden == 0 || !(config.lr > 0.0) {
        return Err(Error::Config {
            field: "probe".into(),
            msg: "batch_size and hidden must be positive and lr > 0".into(),
        });
    }
    let platforms = params.dims.platforms;
    let z_train = predict_fused(params, &data.batch(train_idx), arch)?;
    let y_train: Vec<usize> = train_idx.iter().map(|&i| data.platform[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "probe"));
    let mut l1 = DenseLayer::init(z_train.cols(), config.hidden, Activation::Relu, &mut rng);
    let mut out = DenseLayer::init(config.hidden, platforms, Activation::Identity, &mut rng);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = z_train.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&r| y_train[r]).collect();
            let (hidden, c1) = l1.forward(&x)?;
            let (logits, c2) = out.forward(&hidden)?;
            let (_, dlogits) = cross_entropy_loss(&logits, &y)?;
            let g2 = out.backward(&c2, &dlogits, true)?;
            let g1 = l1.backward(&c1, g2.input.as_ref().expect("requested"), false)?;
            adam.step(
                &mut [
                    l1.weight.data_mut(),
                    &mut l1.bias,
                    out.weight.data_mut(),
                    &mut out.bias,
                ],
                &[g1.weight.data(), &g1.bias, g2.weight.data(), &g2.bias],
            )?;
        }
    }
    let z_test = predict_fused(params, &data.batch(test_idx), arch)?;
    let (hidden, _) = l1.forward(&z_test)?;
    let (logits, _) = out.forward(&hidden)?;
    let labels: Vec<usize> = test_idx.iter().map(|&i| data.platform[i]).collect();
    score(&logits, &labels, platforms)
}
