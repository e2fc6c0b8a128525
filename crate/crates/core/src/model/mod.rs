//! The adaptation network: frozen-text projection, behavior MLP, gated
//! fusion, prediction head, platform discriminator behind a gradient
//! reversal layer, and per-platform calibration.

mod check;
mod forward;
mod params;
mod snapshot;
mod train;

pub use check::{check_gradients, check_reversal, numeric_loss_gradients, random_step_batch, BlockCheck, ModelGradCheck};
pub use forward::{
    behavior_embed, discriminate, dropout_mask, encode, fuse, gate, head, loss_and_grads, modality_dropout,
    predict_fused, predict_latent, predict_platform_logits, Architecture, Batch, Objective, Representations, StepBatch, StepOutput, TEXT_INPUT_GAIN,
};
pub use params::{BehaviorStandardizer, Block, Gradients, ModelDims, ModelParams};
pub use snapshot::{decode_snapshot, encode_snapshot, Snapshot};
pub use train::{
    finetune_all, predict_calibrated, train, train_from, train_step, Dataset, EpochLog, FineTuneConfig, FineTuneLog,
    StepLosses, TrainConfig, TrainLog, TrainSets,
};

#[cfg(test)]
mod tests;
