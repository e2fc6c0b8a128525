use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Block, Gradients, ModelParams};
use crate::data::BEHAVIOR_FEATURES;
use crate::nn::{
    cross_entropy_loss, grl_backward, grl_forward, mse_loss, sigmoid, BatchNormCache, BatchStats, DenseCache, Matrix,
    Mode,
};
use crate::{Error, Result};

/// Switches used by the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// When false the behavior MLP sees zeros and the gate sees `m = 0`.
    pub use_behavior: bool,
    /// When false the gate is fixed at `α = 1`.
    pub use_gate: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            use_behavior: true,
            use_gate: true,
        }
    }
}

/// Model inputs for a set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Frozen text embeddings, `n × embed`.
    pub text: Matrix,
    /// Imputed raw behavior aggregates, `n × 6`.
    pub behavior: Matrix,
    /// Modality flags `m ∈ {0, 1}`.
    pub modality: Vec<f64>,
    pub platform: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.platform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.platform.is_empty()
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let n = self.len();
        if self.text.shape() != (n, params.dims.embed) {
            return Err(Error::shape(
                "batch.text",
                format!("{n}x{}", params.dims.embed),
                format!("{}x{}", self.text.rows(), self.text.cols()),
            ));
        }
        if self.behavior.shape() != (n, BEHAVIOR_FEATURES) {
            return Err(Error::shape(
                "batch.behavior",
                format!("{n}x{BEHAVIOR_FEATURES}"),
                format!("{}x{}", self.behavior.rows(), self.behavior.cols()),
            ));
        }
        if self.modality.len() != n {
            return Err(Error::shape("batch.modality", n, self.modality.len()));
        }
        if !self.behavior.is_finite() {
            return Err(Error::NonFinite("behavior input (impute before training)".into()));
        }
        for &p in &self.platform {
            params.check_platform(p)?;
        }
        Ok(())
    }

    pub fn vcat(&self, other: &Batch) -> Result<Batch> {
        Ok(Batch {
            text: self.text.vcat(&other.text)?,
            behavior: self.behavior.vcat(&other.behavior)?,
            modality: self.modality.iter().chain(&other.modality).copied().collect(),
            platform: self.platform.iter().chain(&other.platform).copied().collect(),
        })
    }

    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            text: self.text.slice_rows(start, end),
            behavior: self.behavior.slice_rows(start, end),
            modality: self.modality[start..end].to_vec(),
            platform: self.platform[start..end].to_vec(),
        }
    }
}

/// Independently drops the behavior modality of each instance with
/// probability `p_mod`: its behavior becomes the platform's imputation
/// constants and `m = 0`. Returns the altered copy and the drop mask.
pub fn modality_dropout<R: Rng + ?Sized>(
    batch: &Batch,
    fill: &[[f64; BEHAVIOR_FEATURES]],
    p_mod: f64,
    rng: &mut R,
) -> Result<(Batch, Vec<bool>)> {
    let mut out = batch.clone();
    let mut dropped = vec![false; batch.len()];
    for i in 0..batch.len() {
        if rng.random::<f64>() < p_mod {
            let p = batch.platform[i];
            let c = fill.get(p).ok_or(Error::UnknownPlatform(p))?;
            out.behavior.row_mut(i).copy_from_slice(c);
            out.modality[i] = 0.0;
            dropped[i] = true;
        }
    }
    Ok((out, dropped))
}

/// Inverted-dropout mask for the fusion head's hidden layer.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Option<Matrix> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Some(Matrix::from_vec(rows, cols, data).expect("sized above"))
}

pub(crate) struct BehaviorCache {
    l1: DenseCache,
    bn1: BatchNormCache,
    l2: DenseCache,
    bn2: BatchNormCache,
    out: DenseCache,
}

fn behavior_input(params: &ModelParams, behavior: &Matrix, arch: Architecture) -> Matrix {
    let n = behavior.rows();
    let mut x = Matrix::zeros(n, BEHAVIOR_FEATURES);
    if arch.use_behavior {
        for i in 0..n {
            params.standardizer.apply(behavior.row(i), x.row_mut(i));
        }
    }
    x
}

pub(crate) fn behavior_forward(
    params: &ModelParams,
    behavior: &Matrix,
    arch: Architecture,
    mode: Mode,
) -> Result<(Matrix, BehaviorCache, Option<[BatchStats; 2]>)> {
    if !behavior.is_finite() {
        return Err(Error::NonFinite("behavior input".into()));
    }
    let x = behavior_input(params, behavior, arch);
    let (a1, l1) = params.behavior_l1.forward(&x)?;
    let (n1, bn1, s1) = params.behavior_bn1.forward(&a1, mode)?;
    let (a2, l2) = params.behavior_l2.forward(&n1)?;
    let (n2, bn2, s2) = params.behavior_bn2.forward(&a2, mode)?;
    let (g, out) = params.behavior_out.forward(&n2)?;
    let stats = match (s1, s2) {
        (Some(a), Some(b)) => Some([a, b]),
        _ => None,
    };
    Ok((g, BehaviorCache { l1, bn1, l2, bn2, out }, stats))
}

/// Behavior embedding `g = φ(b)` for raw (imputed) behavior rows.
pub fn behavior_embed(params: &ModelParams, behavior: &Matrix, arch: Architecture, mode: Mode) -> Result<Matrix> {
    Ok(behavior_forward(params, behavior, arch, mode)?.0)
}

/// `α_i = σ(w_g·[h_i; m_i] + b_g)`.
pub fn gate(params: &ModelParams, h: &Matrix, m: &[f64]) -> Result<Vec<f64>> {
    let d = params.dims.latent;
    if h.cols() != d || h.rows() != m.len() {
        return Err(Error::shape(
            "gate",
            format!("h {}x{d}", m.len()),
            format!("h {}x{}", h.rows(), h.cols()),
        ));
    }
    let (wh, wm) = params.gate_w.split_at(d);
    Ok((0..h.rows())
        .map(|i| {
            let u = h.row(i).iter().zip(wh).map(|(a, b)| a * b).sum::<f64>() + m[i] * wm[0] + params.gate_b;
            sigmoid(u)
        })
        .collect())
}

/// `z_i = [h_i; α_i g_i]`.
pub fn fuse(h: &Matrix, g: &Matrix, alpha: &[f64]) -> Result<Matrix> {
    if h.rows() != g.rows() || h.rows() != alpha.len() {
        return Err(Error::shape(
            "fuse",
            format!("{} rows in h, g and alpha", h.rows()),
            format!("g {} rows, alpha {}", g.rows(), alpha.len()),
        ));
    }
    let mut scaled = g.clone();
    for (i, &a) in alpha.iter().enumerate() {
        for v in scaled.row_mut(i) {
            *v *= a;
        }
    }
    h.hcat(&scaled)
}

/// Platform logits from fused representations.
pub fn discriminate(params: &ModelParams, z: &Matrix) -> Result<Matrix> {
    let (hidden, _) = params.disc_l1.forward(&grl_forward(z))?;
    Ok(params.disc_out.forward(&hidden)?.0)
}

/// Gain applied to unit-norm text embeddings before projection. A unit
/// vector spread over hundreds of coordinates is tiny per coordinate; this
/// brings text to a scale comparable with the standardized behavior input.
pub const TEXT_INPUT_GAIN: f64 = 12.0;

fn project_text(params: &ModelParams, text: &Matrix) -> Result<(Matrix, DenseCache)> {
    params.text_proj.forward(&text.scale(TEXT_INPUT_GAIN))
}

/// Intermediate representations of an eval-mode pass.
#[derive(Debug, Clone)]
pub struct Representations {
    pub h: Matrix,
    pub g: Matrix,
    pub alpha: Vec<f64>,
    pub z: Matrix,
}

fn alpha_for(params: &ModelParams, h: &Matrix, m: &[f64], arch: Architecture) -> Result<Vec<f64>> {
    if arch.use_gate {
        let m: Vec<f64> = if arch.use_behavior { m.to_vec() } else { vec![0.0; m.len()] };
        gate(params, h, &m)
    } else {
        Ok(vec![1.0; h.rows()])
    }
}

/// Eval-mode encoder pass: text projection, behavior MLP with running
/// statistics, gate and fusion.
pub fn encode(params: &ModelParams, batch: &Batch, arch: Architecture) -> Result<Representations> {
    batch.validate(params)?;
    let (h, _) = project_text(params, &batch.text)?;
    let g = behavior_embed(params, &batch.behavior, arch, Mode::Eval)?;
    let alpha = alpha_for(params, &h, &batch.modality, arch)?;
    let z = fuse(&h, &g, &alpha)?;
    Ok(Representations { h, g, alpha, z })
}

/// Latent score `s = f(z)` from fused representations.
pub fn head(params: &ModelParams, z: &Matrix) -> Result<Vec<f64>> {
    let (q, _) = params.head_l1.forward(z)?;
    Ok(params.head_out.forward(&q)?.0.into_vec())
}

const EVAL_CHUNK: usize = 2048;

/// Eval-mode latent satisfaction scores; deterministic.
pub fn predict_latent(params: &ModelParams, batch: &Batch, arch: Architecture) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    for start in (0..batch.len()).step_by(EVAL_CHUNK) {
        let part = batch.slice(start, (start + EVAL_CHUNK).min(batch.len()));
        let rep = encode(params, &part, arch)?;
        out.extend(head(params, &rep.z)?);
    }
    Ok(out)
}

/// Eval-mode fused representations `z`.
pub fn predict_fused(params: &ModelParams, batch: &Batch, arch: Architecture) -> Result<Matrix> {
    let mut out: Option<Matrix> = None;
    for start in (0..batch.len()).step_by(EVAL_CHUNK) {
        let part = batch.slice(start, (start + EVAL_CHUNK).min(batch.len()));
        let z = encode(params, &part, arch)?.z;
        out = Some(match out {
            None => z,
            Some(acc) => acc.vcat(&z)?,
        });
    }
    out.ok_or(Error::Empty("batch"))
}

/// Eval-mode platform logits.
pub fn predict_platform_logits(params: &ModelParams, batch: &Batch, arch: Architecture) -> Result<Matrix> {
    let mut out: Option<Matrix> = None;
    for start in (0..batch.len()).step_by(EVAL_CHUNK) {
        let part = batch.slice(start, (start + EVAL_CHUNK).min(batch.len()));
        let logits = discriminate(params, &encode(params, &part, arch)?.z)?;
        out = Some(match out {
            None => logits,
            Some(acc) => acc.vcat(&logits)?,
        });
    }
    out.ok_or(Error::Empty("batch"))
}

/// A combined training batch: labeled source rows first, then unlabeled
/// target rows.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub rows: Batch,
    pub n_source: usize,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub lambda: f64,
    pub arch: Architecture,
}

/// Losses and gradients of one training step. Encoder blocks hold
/// `∂L_task − λ ∂L_dom` (the gradient-reversal form), discriminator blocks
/// `∂L_dom`, and head and calibration blocks `∂L_task`.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub task_loss: f64,
    pub dom_loss: f64,
    pub grads: Gradients,
    pub bn_stats: [BatchStats; 2],
}

/// Train-mode forward and backward pass over a combined batch. The task
/// loss is the MSE of calibrated source predictions; the domain loss is the
/// platform cross-entropy over every row. `head_mask` is the inverted
/// dropout mask for the source rows of the head's hidden layer.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &StepBatch,
    head_mask: Option<&Matrix>,
    objective: Objective,
) -> Result<StepOutput> {
    let rows = &batch.rows;
    let n = rows.len();
    let ns = batch.n_source;
    if ns == 0 {
        return Err(Error::Empty("source batch"));
    }
    if ns > n || batch.labels.len() != ns {
        return Err(Error::shape("step batch labels", ns, batch.labels.len()));
    }
    rows.validate(params)?;
    let arch = objective.arch;
    let d = params.dims.latent;

    // Forward.
    let (h, text_cache) = project_text(params, &rows.text)?;
    let (g, bcache, stats) = behavior_forward(params, &rows.behavior, arch, Mode::Train)?;
    let m_in: Vec<f64> = if arch.use_behavior {
        rows.modality.clone()
    } else {
        vec![0.0; n]
    };
    let alpha = alpha_for(params, &h, &m_in, arch)?;
    let z = fuse(&h, &g, &alpha)?;

    let z_src = z.slice_rows(0, ns);
    let (q, head_cache) = params.head_l1.forward(&z_src)?;
    let q_used = match head_mask {
        Some(mask) => {
            if mask.shape() != q.shape() {
                return Err(Error::shape(
                    "head dropout mask",
                    format!("{}x{}", q.rows(), q.cols()),
                    format!("{}x{}", mask.rows(), mask.cols()),
                ));
            }
            q.map2(mask, |a, b| a * b)
        }
        None => q,
    };
    let (s_mat, out_cache) = params.head_out.forward(&q_used)?;
    let s = s_mat.data();
    let mut pred = Vec::with_capacity(ns);
    for i in 0..ns {
        let (a, b) = params.calib.pair(rows.platform[i])?;
        pred.push(a * s[i] + b);
    }
    let (task_loss, dpred) = mse_loss(&pred, &batch.labels)?;

    let (dh1, disc_cache1) = params.disc_l1.forward(&grl_forward(&z))?;
    let (logits, disc_cache2) = params.disc_out.forward(&dh1)?;
    let (dom_loss, dlogits) = cross_entropy_loss(&logits, &rows.platform)?;
    if !task_loss.is_finite() || !dom_loss.is_finite() {
        return Err(Error::Diverged(format!("task loss {task_loss}, domain loss {dom_loss}")));
    }

    let mut grads = Gradients::zeros_like(params);

    // Calibration and head.
    let mut ds = Matrix::zeros(ns, 1);
    {
        let platforms = params.dims.platforms;
        let mut ga = vec![0.0; platforms];
        let mut gb = vec![0.0; platforms];
        for i in 0..ns {
            let p = rows.platform[i];
            ga[p] += dpred[i] * s[i];
            gb[p] += dpred[i];
            ds.data_mut()[i] = dpred[i] * params.calib.scale[p];
        }
        *grads.get_mut(Block::CalibScale) = ga;
        *grads.get_mut(Block::CalibBias) = gb;
    }
    let go = params.head_out.backward(&out_cache, &ds, true)?;
    grads.set_matrix(Block::HeadOutW, go.weight);
    *grads.get_mut(Block::HeadOutB) = go.bias;
    let mut dq = go.input.expect("requested");
    if let Some(mask) = head_mask {
        dq = dq.map2(mask, |a, b| a * b);
    }
    let g1 = params.head_l1.backward(&head_cache, &dq, true)?;
    grads.set_matrix(Block::HeadL1W, g1.weight);
    *grads.get_mut(Block::HeadL1B) = g1.bias;
    let dz_task_src = g1.input.expect("requested");

    // Discriminator, trained on the unreversed domain loss.
    let gd2 = params.disc_out.backward(&disc_cache2, &dlogits, true)?;
    grads.set_matrix(Block::DiscOutW, gd2.weight);
    *grads.get_mut(Block::DiscOutB) = gd2.bias;
    let gd1 = params.disc_l1.backward(&disc_cache1, &gd2.input.expect("requested"), true)?;
    grads.set_matrix(Block::DiscL1W, gd1.weight);
    *grads.get_mut(Block::DiscL1B) = gd1.bias;

    // The encoder sees the task gradient plus the reversed domain gradient.
    let mut dz = grl_backward(&gd1.input.expect("requested"), objective.lambda);
    for i in 0..ns {
        for (a, b) in dz.row_mut(i).iter_mut().zip(dz_task_src.row(i)) {
            *a += b;
        }
    }
    let (mut dh, dscaled) = dz.split_cols(d)?;

    // Gate and fusion.
    let mut dg = dscaled.clone();
    if arch.use_gate {
        let wh = &params.gate_w[..d];
        let mut dw = vec![0.0; d + 1];
        let mut db = 0.0;
        for i in 0..n {
            let dalpha: f64 = dscaled.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
            let du = dalpha * alpha[i] * (1.0 - alpha[i]);
            for (w, hv) in dw[..d].iter_mut().zip(h.row(i)) {
                *w += du * hv;
            }
            dw[d] += du * m_in[i];
            db += du;
            for (x, w) in dh.row_mut(i).iter_mut().zip(wh) {
                *x += du * w;
            }
            for v in dg.row_mut(i) {
                *v *= alpha[i];
            }
        }
        *grads.get_mut(Block::GateW) = dw;
        *grads.get_mut(Block::GateB) = vec![db];
    }

    // Text projection; the frozen embeddings need no gradient.
    let gt = params.text_proj.backward(&text_cache, &dh, false)?;
    grads.set_matrix(Block::TextProjW, gt.weight);
    *grads.get_mut(Block::TextProjB) = gt.bias;

    // Behavior MLP.
    let gbo = params.behavior_out.backward(&bcache.out, &dg, true)?;
    grads.set_matrix(Block::BehaviorOutW, gbo.weight);
    *grads.get_mut(Block::BehaviorOutB) = gbo.bias;
    let (da2, dgamma2, dbeta2) = params.behavior_bn2.backward(&bcache.bn2, &gbo.input.expect("requested"))?;
    *grads.get_mut(Block::BehaviorBn2Gamma) = dgamma2;
    *grads.get_mut(Block::BehaviorBn2Beta) = dbeta2;
    let gl2 = params.behavior_l2.backward(&bcache.l2, &da2, true)?;
    grads.set_matrix(Block::BehaviorL2W, gl2.weight);
    *grads.get_mut(Block::BehaviorL2B) = gl2.bias;
    let (da1, dgamma1, dbeta1) = params.behavior_bn1.backward(&bcache.bn1, &gl2.input.expect("requested"))?;
    *grads.get_mut(Block::BehaviorBn1Gamma) = dgamma1;
    *grads.get_mut(Block::BehaviorBn1Beta) = dbeta1;
    let gl1 = params.behavior_l1.backward(&bcache.l1, &da1, false)?;
    grads.set_matrix(Block::BehaviorL1W, gl1.weight);
    *grads.get_mut(Block::BehaviorL1B) = gl1.bias;

    Ok(StepOutput {
        task_loss,
        dom_loss,
        grads,
        bn_stats: stats.expect("train mode yields statistics"),
    })
}
