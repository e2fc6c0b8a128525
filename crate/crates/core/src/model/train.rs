use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{
    dropout_mask, loss_and_grads, modality_dropout, predict_latent, Architecture, Batch, Objective, StepBatch,
};
use super::params::{BehaviorStandardizer, Block, ModelDims, ModelParams};
use crate::data::{Corpus, ImputationStats, InstanceId, BEHAVIOR_FEATURES};
use crate::embed::EmbeddingTable;
use crate::fingerprint::{derive_seed, of_json};
use crate::nn::{AdamConfig, AdamState, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the reversed domain gradient.
    pub lambda: f64,
    /// Modality dropout probability.
    pub p_mod: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Dropout on the fusion head's hidden layer.
    pub dropout_rate: f64,
    pub fusion_hidden: usize,
    pub use_behavior: bool,
    pub use_gate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            p_mod: 0.3,
            lr: 3e-4,
            batch_size: 256,
            max_epochs: 8,
            patience: 2,
            seed: 0,
            dropout_rate: 0.1,
            fusion_hidden: 512,
            use_behavior: true,
            use_gate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config {
            field: format!("train.{field}"),
            msg,
        });
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda", format!("{} must be finite and >= 0", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.p_mod) {
            return bad("p_mod", format!("{} not in [0,1]", self.p_mod));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("{} must be finite and >= 0", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch_size", format!("{} must be >= 2", self.batch_size));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("{} not in [0,1)", self.dropout_rate));
        }
        if self.fusion_hidden == 0 {
            return bad("fusion_hidden", "must be > 0".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            use_behavior: self.use_behavior,
            use_gate: self.use_gate,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            lambda: self.lambda,
            arch: self.architecture(),
        }
    }

    pub fn fingerprint(&self) -> String {
        of_json(self)
    }

    pub fn dims(&self, platforms: usize) -> ModelDims {
        ModelDims {
            fusion_hidden: self.fusion_hidden,
            ..ModelDims::benchmark(platforms)
        }
    }
}

/// Imputed corpus rows joined with their frozen text embeddings.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    pub text: &'a Matrix,
    pub behavior: Matrix,
    pub modality: Vec<f64>,
    pub platform: Vec<usize>,
    pub labels: Vec<f64>,
    pub ids: Vec<InstanceId>,
    /// Per-platform imputation constants, used by modality dropout.
    pub fill: Vec<[f64; BEHAVIOR_FEATURES]>,
    pub platforms: usize,
}

impl<'a> Dataset<'a> {
    pub fn new(imputed: &Corpus, embeddings: &'a EmbeddingTable, stats: &ImputationStats) -> Result<Self> {
        let n = imputed.instances.len();
        if embeddings.len() != n {
            return Err(Error::shape("dataset embeddings", n, embeddings.len()));
        }
        if stats.platform_means.len() != imputed.num_platforms() {
            return Err(Error::shape(
                "dataset imputation stats",
                imputed.num_platforms(),
                stats.platform_means.len(),
            ));
        }
        let mut behavior = Matrix::zeros(n, BEHAVIOR_FEATURES);
        for (i, inst) in imputed.instances.iter().enumerate() {
            behavior.row_mut(i).copy_from_slice(&inst.behavior);
        }
        if !behavior.is_finite() {
            return Err(Error::NonFinite("behavior (corpus not imputed)".into()));
        }
        Ok(Self {
            text: &embeddings.rows,
            behavior,
            modality: imputed.instances.iter().map(|i| f64::from(i.modality)).collect(),
            platform: imputed.instances.iter().map(|i| i.platform).collect(),
            labels: imputed.instances.iter().map(|i| i.label).collect(),
            ids: imputed.instances.iter().map(|i| i.id()).collect(),
            fill: stats.platform_means.clone(),
            platforms: imputed.num_platforms(),
        })
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            text: self.text.select_rows(idx),
            behavior: self.behavior.select_rows(idx),
            modality: idx.iter().map(|&i| self.modality[i]).collect(),
            platform: idx.iter().map(|&i| self.platform[i]).collect(),
        }
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn ids_of(&self, idx: &[usize]) -> Vec<InstanceId> {
        idx.iter().map(|&i| self.ids[i]).collect()
    }
}

/// Row indices that feed one training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSets {
    pub source_train: Vec<usize>,
    pub source_val: Vec<usize>,
    /// Unlabeled target rows for the domain loss.
    pub target_train: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub task: f64,
    pub domain: f64,
}

/// One optimizer step: modality dropout on both sides, combined
/// forward/backward pass, Adam update on every block, batchnorm running
/// statistics update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    source: &Batch,
    labels: &[f64],
    target: &Batch,
    fill: &[[f64; BEHAVIOR_FEATURES]],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    if source.is_empty() {
        return Err(Error::Empty("source batch"));
    }
    let rows = source.vcat(target)?;
    let p_mod = if config.use_gate && config.use_behavior { config.p_mod } else { 0.0 };
    let (rows, _) = modality_dropout(&rows, fill, p_mod, rng)?;
    let mask = dropout_mask(source.len(), params.dims.fusion_hidden, config.dropout_rate, rng);
    let step = StepBatch {
        rows,
        n_source: source.len(),
        labels: labels.to_vec(),
    };
    let out = loss_and_grads(params, &step, mask.as_ref(), config.objective())?;
    apply_update(params, adam, &out.grads.blocks, &[])?;
    params.behavior_bn1.update_running(&out.bn_stats[0]);
    params.behavior_bn2.update_running(&out.bn_stats[1]);
    Ok(StepLosses {
        task: out.task_loss,
        domain: out.dom_loss,
    })
}

/// Adam step over every block not listed in `frozen`.
pub(crate) fn apply_update(
    params: &mut ModelParams,
    adam: &mut AdamState,
    grads: &[Vec<f64>],
    frozen: &[Block],
) -> Result<()> {
    let mut views = params.blocks_mut();
    let mut ps: Vec<&mut [f64]> = Vec::with_capacity(views.len());
    let mut gs: Vec<&[f64]> = Vec::with_capacity(views.len());
    for (i, v) in views.drain(..).enumerate() {
        if !frozen.contains(&Block::ALL[i]) {
            ps.push(v);
            gs.push(&grads[i]);
        }
    }
    adam.step(&mut ps, &gs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training losses over the epoch; absent for the initial entry.
    pub task_loss: Option<f64>,
    pub domain_loss: Option<f64>,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Entry 0 is the initial model, before any step.
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub steps: u64,
}

impl TrainLog {
    pub fn best_val_rmse(&self) -> f64 {
        self.epochs[self.best_epoch].val_rmse
    }
}

/// Calibrated predictions for rows of possibly several platforms.
pub fn predict_calibrated(params: &ModelParams, data: &Dataset, idx: &[usize], arch: Architecture) -> Result<Vec<f64>> {
    let s = predict_latent(params, &data.batch(idx), arch)?;
    idx.iter()
        .zip(s)
        .map(|(&i, s)| {
            let (a, b) = params.calib.pair(data.platform[i])?;
            Ok(a * s + b)
        })
        .collect()
}

fn rmse(pred: &[f64], label: &[f64]) -> f64 {
    (pred.iter().zip(label).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64).sqrt()
}

/// Full training run from a fresh initialization derived from
/// `config.seed`. Returns the snapshot with the lowest source-validation
/// RMSE.
pub fn train(data: &Dataset, sets: &TrainSets, config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if sets.source_train.len() < 2 {
        return Err(Error::Empty("source training rows"));
    }
    if sets.source_val.is_empty() {
        return Err(Error::Empty("source validation rows"));
    }
    if sets.target_train.len() < 2 {
        return Err(Error::Empty("target training rows"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
    let dims = ModelDims {
        embed: data.text.cols(),
        ..config.dims(data.platforms)
    };
    let mut params = ModelParams::init(dims, &mut init_rng)?;
    params.standardizer =
        BehaviorStandardizer::fit(sets.source_train.iter().map(|&i| row6(&data.behavior, i)))?;
    // Start the head at the source rating level so early steps learn
    // structure rather than the offset.
    let labels = data.labels_of(&sets.source_train);
    params.head_out.bias[0] = labels.iter().sum::<f64>() / labels.len() as f64;
    train_from(params, data, sets, config)
}

fn row6(m: &Matrix, i: usize) -> &[f64; BEHAVIOR_FEATURES] {
    m.row(i).try_into().expect("behavior rows have 6 columns")
}

/// Continues training from `params` with a fresh optimizer.
pub fn train_from(
    mut params: ModelParams,
    data: &Dataset,
    sets: &TrainSets,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let arch = config.architecture();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train"));
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let val_labels = data.labels_of(&sets.source_val);

    let val0 = rmse(&predict_calibrated(&params, data, &sets.source_val, arch)?, &val_labels);
    let mut log = TrainLog {
        epochs: vec![EpochLog {
            epoch: 0,
            task_loss: None,
            domain_loss: None,
            val_rmse: val0,
        }],
        best_epoch: 0,
        steps: 0,
    };
    let mut best = params.clone();
    let mut since_best = 0usize;

    let mut source = sets.source_train.clone();
    let mut target = sets.target_train.clone();
    target.shuffle(&mut rng);
    let mut target_pos = 0usize;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        source.shuffle(&mut rng);
        let (mut task_sum, mut dom_sum, mut count) = (0.0, 0.0, 0usize);
        for chunk in source.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut tgt = Vec::with_capacity(config.batch_size);
            while tgt.len() < config.batch_size.min(target.len()) {
                if target_pos == target.len() {
                    target.shuffle(&mut rng);
                    target_pos = 0;
                }
                tgt.push(target[target_pos]);
                target_pos += 1;
            }
            let losses = train_step(
                &mut params,
                &mut adam,
                &data.batch(chunk),
                &data.labels_of(chunk),
                &data.batch(&tgt),
                &data.fill,
                config,
                &mut rng,
            )
            .map_err(|e| match e {
                Error::Diverged(msg) => Error::Diverged(format!("epoch {epoch}, step {}: {msg}", log.steps + 1)),
                other => other,
            })?;
            log.steps += 1;
            task_sum += losses.task;
            dom_sum += losses.domain;
            count += 1;
        }
        if !params.is_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {epoch}")));
        }
        let val = rmse(&predict_calibrated(&params, data, &sets.source_val, arch)?, &val_labels);
        let entry = EpochLog {
            epoch,
            task_loss: Some(task_sum / count.max(1) as f64),
            domain_loss: Some(dom_sum / count.max(1) as f64),
            val_rmse: val,
        };
        log::debug!(
            "epoch {epoch}: task {:.4} domain {:.4} val_rmse {:.4} ({:.1}s)",
            task_sum / count.max(1) as f64,
            dom_sum / count.max(1) as f64,
            val,
            started.elapsed().as_secs_f64()
        );
        log.epochs.push(entry);
        if val < log.best_val_rmse() {
            log.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    Ok((best, log))
}

/// Schedule for all-parameter fine-tuning on a few labeled target rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub max_steps: usize,
    /// Steps without held-out improvement before stopping (k ≥ 20 only).
    pub patience: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_steps: 200,
            patience: 20,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config {
                field: "finetune.lr".into(),
                msg: format!("{} must be finite and >= 0", self.lr),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneLog {
    pub steps: usize,
    pub fit_rows: usize,
    pub holdout_rows: usize,
}

const DISCRIMINATOR_BLOCKS: [Block; 4] = [Block::DiscL1W, Block::DiscL1B, Block::DiscOutW, Block::DiscOutB];

/// Fine-tunes every predictive parameter on labeled target rows with the
/// task loss alone; the discriminator has no target signal and stays
/// fixed. Batches are the whole fitting set when it fits in
/// `train.batch_size`. With no rows the input is returned unchanged. From
/// 20 rows a quarter is held out and the best held-out state is returned.
pub fn finetune_all(
    params: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    train: &TrainConfig,
    config: &FineTuneConfig,
) -> Result<(ModelParams, FineTuneLog)> {
    train.validate()?;
    config.validate()?;
    let k = rows.len();
    if k == 0 {
        return Ok((
            params.clone(),
            FineTuneLog {
                steps: 0,
                fit_rows: 0,
                holdout_rows: 0,
            },
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, "finetune"));
    let mut order = rows.to_vec();
    let (mut fit, holdout) = if k >= crate::calib::FEWSHOT_HOLDOUT_MIN_K {
        order.shuffle(&mut rng);
        let n_hold = k / 4;
        (order[n_hold..].to_vec(), order[..n_hold].to_vec())
    } else {
        (order, Vec::new())
    };
    let arch = train.architecture();
    let objective = Objective {
        lambda: 0.0,
        arch,
    };
    let p_mod = if train.use_gate && train.use_behavior { train.p_mod } else { 0.0 };
    let hold_labels = data.labels_of(&holdout);
    let hold_mse = |p: &ModelParams| -> Result<f64> {
        let pred = predict_calibrated(p, data, &holdout, arch)?;
        Ok(pred.iter().zip(&hold_labels).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64)
    };

    let mut p = params.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut best = p.clone();
    let mut best_hold = if holdout.is_empty() { f64::INFINITY } else { hold_mse(&p)? };
    let mut since_best = 0;
    let mut steps = 0;
    let mut pos = fit.len();
    for _ in 0..config.max_steps {
        let chunk: Vec<usize> = if fit.len() <= train.batch_size {
            fit.clone()
        } else {
            if pos + train.batch_size > fit.len() {
                fit.shuffle(&mut rng);
                pos = 0;
            }
            pos += train.batch_size;
            fit[pos - train.batch_size..pos].to_vec()
        };
        let (batch, _) = modality_dropout(&data.batch(&chunk), &data.fill, p_mod, &mut rng)?;
        let mask = dropout_mask(chunk.len(), p.dims.fusion_hidden, train.dropout_rate, &mut rng);
        let step = StepBatch {
            rows: batch,
            n_source: chunk.len(),
            labels: data.labels_of(&chunk),
        };
        let out = loss_and_grads(&p, &step, mask.as_ref(), objective)?;
        apply_update(&mut p, &mut adam, &out.grads.blocks, &DISCRIMINATOR_BLOCKS)?;
        p.behavior_bn1.update_running(&out.bn_stats[0]);
        p.behavior_bn2.update_running(&out.bn_stats[1]);
        steps += 1;
        if !holdout.is_empty() {
            let hold = hold_mse(&p)?;
            if hold < best_hold {
                best_hold = hold;
                best = p.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if holdout.is_empty() {
        best = p;
    }
    if !best.is_finite() {
        return Err(Error::Diverged("non-finite parameters after fine-tuning".into()));
    }
    Ok((
        best,
        FineTuneLog {
            steps,
            fit_rows: fit.len(),
            holdout_rows: holdout.len(),
        },
    ))
}
