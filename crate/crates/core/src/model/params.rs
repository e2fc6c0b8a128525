use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calib::CalibrationParams;
use crate::data::BEHAVIOR_FEATURES;
use crate::embed::DEFAULT_EMBED_DIM;
use crate::fingerprint::sha256_hex;
use crate::nn::{Activation, BatchNorm, DenseLayer, Matrix};
use crate::{Error, Result};

/// Layer widths. The defaults are the benchmark architecture; gradient
/// checks use smaller ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed: usize,
    /// Width `d` of the projected text and behavior embeddings.
    pub latent: usize,
    pub behavior_hidden: usize,
    pub fusion_hidden: usize,
    pub disc_hidden: usize,
    pub platforms: usize,
}

impl ModelDims {
    pub fn benchmark(platforms: usize) -> Self {
        Self {
            embed: DEFAULT_EMBED_DIM,
            latent: 256,
            behavior_hidden: 128,
            fusion_hidden: 512,
            disc_hidden: 128,
            platforms,
        }
    }

    pub fn fused(&self) -> usize {
        2 * self.latent
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("embed", self.embed),
            ("latent", self.latent),
            ("behavior_hidden", self.behavior_hidden),
            ("fusion_hidden", self.fusion_hidden),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config {
                    field: format!("dims.{name}"),
                    msg: "must be > 0".into(),
                });
            }
        }
        if self.platforms < 2 {
            return Err(Error::Config {
                field: "dims.platforms".into(),
                msg: "need at least 2 platforms".into(),
            });
        }
        Ok(())
    }
}

/// Frozen standardization of raw behavior aggregates, fitted on the source
/// training rows before training starts.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorStandardizer {
    pub mean: [f64; BEHAVIOR_FEATURES],
    pub sd: [f64; BEHAVIOR_FEATURES],
}

impl BehaviorStandardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; BEHAVIOR_FEATURES],
            sd: [1.0; BEHAVIOR_FEATURES],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64; BEHAVIOR_FEATURES]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; BEHAVIOR_FEATURES];
        let mut sq = [0.0; BEHAVIOR_FEATURES];
        for r in rows {
            n += 1;
            for f in 0..BEHAVIOR_FEATURES {
                sum[f] += r[f];
                sq[f] += r[f] * r[f];
            }
        }
        if n == 0 {
            return Err(Error::Empty("behavior standardizer rows"));
        }
        let mut out = Self::identity();
        for f in 0..BEHAVIOR_FEATURES {
            let mean = sum[f] / n as f64;
            let var = (sq[f] / n as f64 - mean * mean).max(0.0);
            out.mean[f] = mean;
            out.sd[f] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(out)
    }

    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for f in 0..BEHAVIOR_FEATURES {
            out[f] = (raw[f] - self.mean[f]) / self.sd[f];
        }
    }
}

/// Every trainable block of the network plus the non-trainable state that
/// travels with it (batchnorm running statistics, behavior standardizer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub standardizer: BehaviorStandardizer,
    pub text_proj: DenseLayer,
    pub behavior_l1: DenseLayer,
    pub behavior_bn1: BatchNorm,
    pub behavior_l2: DenseLayer,
    pub behavior_bn2: BatchNorm,
    pub behavior_out: DenseLayer,
    /// Gate weights over `[h; m]`: `latent` text weights then the flag weight.
    pub gate_w: Vec<f64>,
    pub gate_b: f64,
    pub head_l1: DenseLayer,
    pub head_out: DenseLayer,
    pub disc_l1: DenseLayer,
    pub disc_out: DenseLayer,
    pub calib: CalibrationParams,
}

/// Names of the trainable blocks in canonical order. Gradients, optimizer
/// state and snapshots all follow this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    TextProjW,
    TextProjB,
    BehaviorL1W,
    BehaviorL1B,
    BehaviorBn1Gamma,
    BehaviorBn1Beta,
    BehaviorL2W,
    BehaviorL2B,
    BehaviorBn2Gamma,
    BehaviorBn2Beta,
    BehaviorOutW,
    BehaviorOutB,
    GateW,
    GateB,
    HeadL1W,
    HeadL1B,
    HeadOutW,
    HeadOutB,
    DiscL1W,
    DiscL1B,
    DiscOutW,
    DiscOutB,
    CalibScale,
    CalibBias,
}

impl Block {
    pub const ALL: [Block; 24] = [
        Block::TextProjW,
        Block::TextProjB,
        Block::BehaviorL1W,
        Block::BehaviorL1B,
        Block::BehaviorBn1Gamma,
        Block::BehaviorBn1Beta,
        Block::BehaviorL2W,
        Block::BehaviorL2B,
        Block::BehaviorBn2Gamma,
        Block::BehaviorBn2Beta,
        Block::BehaviorOutW,
        Block::BehaviorOutB,
        Block::GateW,
        Block::GateB,
        Block::HeadL1W,
        Block::HeadL1B,
        Block::HeadOutW,
        Block::HeadOutB,
        Block::DiscL1W,
        Block::DiscL1B,
        Block::DiscOutW,
        Block::DiscOutB,
        Block::CalibScale,
        Block::CalibBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::TextProjW => "text_proj.weight",
            Block::TextProjB => "text_proj.bias",
            Block::BehaviorL1W => "behavior.l1.weight",
            Block::BehaviorL1B => "behavior.l1.bias",
            Block::BehaviorBn1Gamma => "behavior.bn1.gamma",
            Block::BehaviorBn1Beta => "behavior.bn1.beta",
            Block::BehaviorL2W => "behavior.l2.weight",
            Block::BehaviorL2B => "behavior.l2.bias",
            Block::BehaviorBn2Gamma => "behavior.bn2.gamma",
            Block::BehaviorBn2Beta => "behavior.bn2.beta",
            Block::BehaviorOutW => "behavior.out.weight",
            Block::BehaviorOutB => "behavior.out.bias",
            Block::GateW => "gate.weight",
            Block::GateB => "gate.bias",
            Block::HeadL1W => "head.l1.weight",
            Block::HeadL1B => "head.l1.bias",
            Block::HeadOutW => "head.out.weight",
            Block::HeadOutB => "head.out.bias",
            Block::DiscL1W => "disc.l1.weight",
            Block::DiscL1B => "disc.l1.bias",
            Block::DiscOutW => "disc.out.weight",
            Block::DiscOutB => "disc.out.bias",
            Block::CalibScale => "calib.scale",
            Block::CalibBias => "calib.bias",
        }
    }

    /// Blocks that shape the fused representation `z`; they receive the
    /// reversed domain gradient.
    pub fn is_encoder(self) -> bool {
        self.index() <= Block::GateB.index()
    }

    pub fn is_discriminator(self) -> bool {
        (Block::DiscL1W.index()..=Block::DiscOutB.index()).contains(&self.index())
    }
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let d = dims.latent;
        let bound = 1.0 / ((d + 1) as f64).sqrt();
        Ok(Self {
            dims,
            standardizer: BehaviorStandardizer::identity(),
            text_proj: DenseLayer::init(dims.embed, d, Activation::Identity, rng),
            behavior_l1: DenseLayer::init(BEHAVIOR_FEATURES, dims.behavior_hidden, Activation::Relu, rng),
            behavior_bn1: BatchNorm::new(dims.behavior_hidden),
            behavior_l2: DenseLayer::init(dims.behavior_hidden, dims.behavior_hidden, Activation::Relu, rng),
            behavior_bn2: BatchNorm::new(dims.behavior_hidden),
            behavior_out: DenseLayer::init(dims.behavior_hidden, d, Activation::Identity, rng),
            gate_w: (0..=d).map(|_| rng.random_range(-bound..=bound)).collect(),
            gate_b: rng.random_range(-bound..=bound),
            head_l1: DenseLayer::init(dims.fused(), dims.fusion_hidden, Activation::Relu, rng),
            head_out: DenseLayer::init(dims.fusion_hidden, 1, Activation::Identity, rng),
            disc_l1: DenseLayer::init(dims.fused(), dims.disc_hidden, Activation::Relu, rng),
            disc_out: DenseLayer::init(dims.disc_hidden, dims.platforms, Activation::Identity, rng),
            calib: CalibrationParams::identity(dims.platforms),
        })
    }

    pub fn block(&self, b: Block) -> &[f64] {
        match b {
            Block::TextProjW => self.text_proj.weight.data(),
            Block::TextProjB => &self.text_proj.bias,
            Block::BehaviorL1W => self.behavior_l1.weight.data(),
            Block::BehaviorL1B => &self.behavior_l1.bias,
            Block::BehaviorBn1Gamma => &self.behavior_bn1.gamma,
            Block::BehaviorBn1Beta => &self.behavior_bn1.beta,
            Block::BehaviorL2W => self.behavior_l2.weight.data(),
            Block::BehaviorL2B => &self.behavior_l2.bias,
            Block::BehaviorBn2Gamma => &self.behavior_bn2.gamma,
            Block::BehaviorBn2Beta => &self.behavior_bn2.beta,
            Block::BehaviorOutW => self.behavior_out.weight.data(),
            Block::BehaviorOutB => &self.behavior_out.bias,
            Block::GateW => &self.gate_w,
            Block::GateB => std::slice::from_ref(&self.gate_b),
            Block::HeadL1W => self.head_l1.weight.data(),
            Block::HeadL1B => &self.head_l1.bias,
            Block::HeadOutW => self.head_out.weight.data(),
            Block::HeadOutB => &self.head_out.bias,
            Block::DiscL1W => self.disc_l1.weight.data(),
            Block::DiscL1B => &self.disc_l1.bias,
            Block::DiscOutW => self.disc_out.weight.data(),
            Block::DiscOutB => &self.disc_out.bias,
            Block::CalibScale => &self.calib.scale,
            Block::CalibBias => &self.calib.bias,
        }
    }

    /// Mutable views of every block in [`Block::ALL`] order.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.text_proj.weight.data_mut(),
            &mut self.text_proj.bias,
            self.behavior_l1.weight.data_mut(),
            &mut self.behavior_l1.bias,
            &mut self.behavior_bn1.gamma,
            &mut self.behavior_bn1.beta,
            self.behavior_l2.weight.data_mut(),
            &mut self.behavior_l2.bias,
            &mut self.behavior_bn2.gamma,
            &mut self.behavior_bn2.beta,
            self.behavior_out.weight.data_mut(),
            &mut self.behavior_out.bias,
            &mut self.gate_w,
            std::slice::from_mut(&mut self.gate_b),
            self.head_l1.weight.data_mut(),
            &mut self.head_l1.bias,
            self.head_out.weight.data_mut(),
            &mut self.head_out.bias,
            self.disc_l1.weight.data_mut(),
            &mut self.disc_l1.bias,
            self.disc_out.weight.data_mut(),
            &mut self.disc_out.bias,
            &mut self.calib.scale,
            &mut self.calib.bias,
        ]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        self.blocks_mut().swap_remove(b.index())
    }

    /// All trainable values as one vector per block.
    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        Block::ALL.iter().map(|&b| self.block(b).to_vec()).collect()
    }

    /// Overwrites every trainable block; lengths must match.
    pub fn set_blocks(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != Block::ALL.len() {
            return Err(Error::shape("set_blocks", Block::ALL.len(), values.len()));
        }
        for (dst, (src, b)) in self.blocks_mut().into_iter().zip(values.iter().zip(Block::ALL)) {
            if dst.len() != src.len() {
                return Err(Error::shape(b.name(), dst.len(), src.len()));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// SHA-256 over the exact bits of one block.
    pub fn block_fingerprint(&self, b: Block) -> String {
        let bytes: Vec<u8> = self.block(b).iter().flat_map(|v| v.to_le_bytes()).collect();
        sha256_hex(&bytes)
    }

    pub fn num_parameters(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block(b).len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        Block::ALL.iter().all(|&b| self.block(b).iter().all(|v| v.is_finite()))
    }

    pub(crate) fn check_platform(&self, p: usize) -> Result<()> {
        if p >= self.dims.platforms {
            Err(Error::UnknownPlatform(p))
        } else {
            Ok(())
        }
    }
}

/// Gradient of a scalar objective with respect to every block, in
/// [`Block::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            blocks: Block::ALL.iter().map(|&b| vec![0.0; params.block(b).len()]).collect(),
        }
    }

    pub fn get(&self, b: Block) -> &[f64] {
        &self.blocks[b.index()]
    }

    pub fn get_mut(&mut self, b: Block) -> &mut Vec<f64> {
        &mut self.blocks[b.index()]
    }

    pub(crate) fn set_matrix(&mut self, b: Block, m: Matrix) {
        self.blocks[b.index()] = m.into_vec();
    }
}
