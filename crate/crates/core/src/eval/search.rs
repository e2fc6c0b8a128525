use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bench::Prepared;
use super::protocol::{Transfer, Variant};
use crate::fingerprint::derive_seed;
use crate::model::{train, Dataset, TrainConfig, TrainSets};
use crate::{Error, Result};

/// Discrete grid the random search draws from, one value per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub fusion_hidden: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: vec![1e-4, 3e-4, 1e-3],
            dropout_rate: vec![0.1, 0.2, 0.3],
            fusion_hidden: vec![256, 512],
            lambda: vec![0.0, 0.1, 0.3, 0.5, 1.0],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let empty = |field: &str| Error::Config {
            field: format!("search.{field}"),
            msg: "needs at least one value".into(),
        };
        if self.lr.is_empty() {
            return Err(empty("lr"));
        }
        if self.dropout_rate.is_empty() {
            return Err(empty("dropout_rate"));
        }
        if self.fusion_hidden.is_empty() {
            return Err(empty("fusion_hidden"));
        }
        if self.lambda.is_empty() {
            return Err(empty("lambda"));
        }
        Ok(())
    }

    /// Whether every searched field of `config` lies on the grid.
    pub fn contains(&self, config: &TrainConfig) -> bool {
        self.lr.contains(&config.lr)
            && self.dropout_rate.contains(&config.dropout_rate)
            && self.fusion_hidden.contains(&config.fusion_hidden)
            && (config.lambda == 0.0 || self.lambda.contains(&config.lambda))
    }
}

/// One drawn point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPoint {
    pub lr: f64,
    pub dropout_rate: f64,
    pub fusion_hidden: usize,
    pub lambda: f64,
}

impl TrialPoint {
    /// `base` with this point applied. Variants trained without the
    /// adversarial loss ignore the drawn `λ`.
    pub fn apply(&self, base: &TrainConfig, variant: Variant) -> TrainConfig {
        let adversarial = matches!(variant, Variant::DannOnly | Variant::Adaptms);
        TrainConfig {
            lr: self.lr,
            dropout_rate: self.dropout_rate,
            fusion_hidden: self.fusion_hidden,
            lambda: if adversarial { self.lambda } else { 0.0 },
            ..base.clone()
        }
    }
}

/// Uniform independent draws per axis. The sequence depends only on `seed`
/// and is a prefix of any longer budget.
pub fn sample_trials(space: &SearchSpace, budget: usize, seed: u64) -> Result<Vec<TrialPoint>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "search"));
    Ok((0..budget)
        .map(|_| TrialPoint {
            lr: *space.lr.choose(&mut rng).expect("validated"),
            dropout_rate: *space.dropout_rate.choose(&mut rng).expect("validated"),
            fusion_hidden: *space.fusion_hidden.choose(&mut rng).expect("validated"),
            lambda: *space.lambda.choose(&mut rng).expect("validated"),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub point: TrialPoint,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub variant: Variant,
    pub trials: Vec<Trial>,
    /// Configuration of the trial with the lowest source-validation RMSE
    /// (earliest on ties).
    pub best: TrainConfig,
    pub best_val_rmse: f64,
}

/// Random search over `space` for one variant, selecting by
/// source-validation RMSE. Every variant given the same `seed` and `budget`
/// sees the same draws.
pub fn hyperparameter_search(
    prepared: &Prepared,
    transfer: &Transfer,
    variant: Variant,
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::InvalidArgument("search budget must be at least 1".into()));
    }
    let sources: &[usize] = match variant {
        Variant::SourceOnly | Variant::FinetuneAll => &transfer.sources[..1],
        _ => &transfer.sources,
    };
    let sets = TrainSets {
        source_train: sources.iter().flat_map(|&p| prepared.splits[p].train.clone()).collect(),
        source_val: sources.iter().flat_map(|&p| prepared.splits[p].val.clone()).collect(),
        target_train: prepared.splits[transfer.target].train.clone().collect(),
    };
    if sets.source_val.is_empty() {
        return Err(Error::Empty("source validation split"));
    }
    let data = Dataset::new(&prepared.imputed, &prepared.embeddings, &prepared.imputation)?;
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(TrainConfig, f64)> = None;
    for (i, point) in sample_trials(space, budget, seed)?.into_iter().enumerate() {
        let config = TrainConfig {
            seed: derive_seed(seed, &format!("trial/{i}")),
            ..point.apply(base, variant)
        };
        log::info!("{} trial {}/{budget}: {point:?}", variant.name(), i + 1);
        let (_, log) = train(&data, &sets, &config)?;
        let val_rmse = log.best_val_rmse();
        if best.as_ref().is_none_or(|(_, b)| val_rmse < *b) {
            best = Some((config, val_rmse));
        }
        trials.push(Trial { point, val_rmse });
    }
    let (best, best_val_rmse) = best.expect("budget >= 1");
    Ok(SearchResult {
        variant,
        trials,
        best,
        best_val_rmse,
    })
}
