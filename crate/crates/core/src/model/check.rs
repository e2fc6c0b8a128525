//! Finite-difference verification of the composite training gradient.

use rand::Rng;

use super::forward::{loss_and_grads, Batch, Objective, StepBatch};
use super::params::{Block, ModelParams};
use crate::data::BEHAVIOR_FEATURES;
use crate::nn::gradcheck::{numeric_gradient, relative_error};
use crate::nn::Matrix;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: Block,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradCheck {
    pub blocks: Vec<BlockCheck>,
}

impl ModelGradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

fn losses(params: &ModelParams, values: &[Vec<f64>], batch: &StepBatch, mask: Option<&Matrix>, obj: Objective) -> (f64, f64) {
    let mut p = params.clone();
    p.set_blocks(values).expect("same layout");
    let out = loss_and_grads(&p, batch, mask, obj).expect("valid batch");
    (out.task_loss, out.dom_loss)
}

/// Numeric gradients of the task and domain losses with respect to every
/// block.
pub fn numeric_loss_gradients(
    params: &ModelParams,
    batch: &StepBatch,
    mask: Option<&Matrix>,
    objective: Objective,
    perturbation: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let values = params.to_blocks();
    let task = numeric_gradient(|v| losses(params, v, batch, mask, objective).0, &values, perturbation);
    let dom = numeric_gradient(|v| losses(params, v, batch, mask, objective).1, &values, perturbation);
    (task, dom)
}

/// Checks every block against the scalar it is trained on: encoder blocks
/// against `L_task − λ·L_dom`, discriminator blocks against `L_dom`, head
/// and calibration blocks against `L_task`.
pub fn check_gradients(
    params: &ModelParams,
    batch: &StepBatch,
    mask: Option<&Matrix>,
    objective: Objective,
    perturbation: f64,
) -> Result<ModelGradCheck> {
    let analytic = loss_and_grads(params, batch, mask, objective)?.grads;
    let (task, dom) = numeric_loss_gradients(params, batch, mask, objective, perturbation);
    let blocks = Block::ALL
        .iter()
        .map(|&b| {
            let i = b.index();
            let err = analytic.blocks[i]
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    let n = if b.is_encoder() {
                        task[i][j] - objective.lambda * dom[i][j]
                    } else if b.is_discriminator() {
                        dom[i][j]
                    } else {
                        task[i][j]
                    };
                    relative_error(a, n)
                })
                .fold(0.0, f64::max);
            BlockCheck {
                block: b,
                max_rel_error: err,
            }
        })
        .collect();
    Ok(ModelGradCheck { blocks })
}

/// Verifies the gradient-reversal identity on the encoder: the domain part
/// of the analytic encoder gradient at `λ` (its difference from the `λ = 0`
/// gradient) equals `−λ` times the numeric gradient of the unreversed
/// domain loss. Returns the worst relative error.
pub fn check_reversal(
    params: &ModelParams,
    batch: &StepBatch,
    mask: Option<&Matrix>,
    objective: Objective,
    perturbation: f64,
) -> Result<f64> {
    let with = loss_and_grads(params, batch, mask, objective)?.grads;
    let without = loss_and_grads(params, batch, mask, Objective { lambda: 0.0, ..objective })?.grads;
    let (_, dom) = numeric_loss_gradients(params, batch, mask, objective, perturbation);
    let mut worst: f64 = 0.0;
    for b in Block::ALL.iter().filter(|b| b.is_encoder()) {
        let i = b.index();
        for j in 0..dom[i].len() {
            let domain_part = with.blocks[i][j] - without.blocks[i][j];
            worst = worst.max(relative_error(domain_part, -objective.lambda * dom[i][j]));
        }
    }
    Ok(worst)
}

/// Random combined batch with the given embedding width, for checks.
pub fn random_step_batch<R: Rng + ?Sized>(
    embed: usize,
    platforms: usize,
    n_source: usize,
    n_target: usize,
    rng: &mut R,
) -> StepBatch {
    let n = n_source + n_target;
    let text = Matrix::from_vec(n, embed, (0..n * embed).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("sized");
    let behavior = Matrix::from_vec(
        n,
        BEHAVIOR_FEATURES,
        (0..n * BEHAVIOR_FEATURES).map(|_| rng.random_range(0.0..3.0)).collect(),
    )
    .expect("sized");
    let modality = (0..n).map(|i| (i % 3 != 0) as u8 as f64).collect();
    let platform = (0..n)
        .map(|i| if i < n_source { i % (platforms - 1) } else { platforms - 1 })
        .collect();
    StepBatch {
        rows: Batch {
            text,
            behavior,
            modality,
            platform,
        },
        n_source,
        labels: (0..n_source).map(|_| rng.random_range(1.0..5.0)).collect(),
    }
}
