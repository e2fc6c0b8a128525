//! Versioned binary model snapshot: dims, every parameter block with its
//! shape, batchnorm running statistics, the behavior standardizer and the
//! calibration table, tagged with the producing config's fingerprint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Block, ModelDims, ModelParams};
use crate::data::BEHAVIOR_FEATURES;
use crate::wire::{Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ADMSNAP\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config_fingerprint: String,
    pub params: ModelParams,
}

fn block_shape(dims: &ModelDims, b: Block) -> (usize, usize) {
    let d = dims.latent;
    let bh = dims.behavior_hidden;
    match b {
        Block::TextProjW => (dims.embed, d),
        Block::BehaviorL1W => (BEHAVIOR_FEATURES, bh),
        Block::BehaviorL2W => (bh, bh),
        Block::BehaviorOutW => (bh, d),
        Block::HeadL1W => (dims.fused(), dims.fusion_hidden),
        Block::HeadOutW => (dims.fusion_hidden, 1),
        Block::DiscL1W => (dims.fused(), dims.disc_hidden),
        Block::DiscOutW => (dims.disc_hidden, dims.platforms),
        Block::TextProjB | Block::BehaviorOutB => (1, d),
        Block::BehaviorL1B
        | Block::BehaviorL2B
        | Block::BehaviorBn1Gamma
        | Block::BehaviorBn1Beta
        | Block::BehaviorBn2Gamma
        | Block::BehaviorBn2Beta => (1, bh),
        Block::GateW => (1, d + 1),
        Block::GateB => (1, 1),
        Block::HeadL1B => (1, dims.fusion_hidden),
        Block::HeadOutB => (1, 1),
        Block::DiscL1B => (1, dims.disc_hidden),
        Block::DiscOutB | Block::CalibScale | Block::CalibBias => (1, dims.platforms),
    }
}

/// Non-trainable state, stored after the trainable blocks.
const STATE_NAMES: [&str; 7] = [
    "behavior.bn1.running_mean",
    "behavior.bn1.running_var",
    "behavior.bn2.running_mean",
    "behavior.bn2.running_var",
    "behavior.bn.hyper",
    "standardizer.mean",
    "standardizer.sd",
];

fn state_values(p: &ModelParams) -> [Vec<f64>; 7] {
    [
        p.behavior_bn1.running_mean.clone(),
        p.behavior_bn1.running_var.clone(),
        p.behavior_bn2.running_mean.clone(),
        p.behavior_bn2.running_var.clone(),
        vec![
            p.behavior_bn1.momentum,
            p.behavior_bn1.epsilon,
            p.behavior_bn2.momentum,
            p.behavior_bn2.epsilon,
        ],
        p.standardizer.mean.to_vec(),
        p.standardizer.sd.to_vec(),
    ]
}

pub fn encode_snapshot(snapshot: &Snapshot) -> Vec<u8> {
    let p = &snapshot.params;
    let d = &p.dims;
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.str(&snapshot.config_fingerprint);
    for v in [d.embed, d.latent, d.behavior_hidden, d.fusion_hidden, d.disc_hidden, d.platforms] {
        w.u64(v as u64);
    }
    let state = state_values(p);
    w.u32((Block::ALL.len() + state.len()) as u32);
    for b in Block::ALL {
        let (r, c) = block_shape(d, b);
        w.str(b.name());
        w.u64(r as u64);
        w.u64(c as u64);
        w.f64s(p.block(b));
    }
    for (name, values) in STATE_NAMES.iter().zip(&state) {
        w.str(name);
        w.u64(1);
        w.u64(values.len() as u64);
        w.f64s(values);
    }
    w.finish()
}

fn read_block(r: &mut Reader, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let found = r.str()?;
    if found != name {
        return Err(r.err(format!("expected block {name:?}, found {found:?}")));
    }
    let (fr, fc) = (r.u64()?, r.u64()?);
    if (fr, fc) != (rows as u64, cols as u64) {
        return Err(r.err(format!("block {name}: expected {rows}x{cols}, found {fr}x{fc}")));
    }
    r.f64s(rows * cols)
}

/// Decodes and validates a snapshot. Never panics on malformed input.
pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = Reader::new(bytes, "model snapshot");
    if r.take(MAGIC.len())? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let config_fingerprint = r.str()?;
    let mut dim = || -> Result<usize> {
        let v = r.u64()?;
        // Generous bound so corrupt headers cannot request huge allocations.
        if v > 1 << 16 {
            return Err(r.err(format!("dimension {v} out of range")));
        }
        Ok(v as usize)
    };
    let dims = ModelDims {
        embed: dim()?,
        latent: dim()?,
        behavior_hidden: dim()?,
        fusion_hidden: dim()?,
        disc_hidden: dim()?,
        platforms: dim()?,
    };
    dims.validate().map_err(|e| r.err(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != Block::ALL.len() + STATE_NAMES.len() {
        return Err(r.err(format!("unexpected block count {count}")));
    }
    let mut blocks = Vec::with_capacity(Block::ALL.len());
    for b in Block::ALL {
        let (rows, cols) = block_shape(&dims, b);
        blocks.push(read_block(&mut r, b.name(), rows, cols)?);
    }
    let bh = dims.behavior_hidden;
    let rm1 = read_block(&mut r, STATE_NAMES[0], 1, bh)?;
    let rv1 = read_block(&mut r, STATE_NAMES[1], 1, bh)?;
    let rm2 = read_block(&mut r, STATE_NAMES[2], 1, bh)?;
    let rv2 = read_block(&mut r, STATE_NAMES[3], 1, bh)?;
    let hyper = read_block(&mut r, STATE_NAMES[4], 1, 4)?;
    let smean = read_block(&mut r, STATE_NAMES[5], 1, BEHAVIOR_FEATURES)?;
    let ssd = read_block(&mut r, STATE_NAMES[6], 1, BEHAVIOR_FEATURES)?;
    r.finish()?;

    let mut params = ModelParams::init(dims, &mut ChaCha8Rng::seed_from_u64(0))?;
    params.set_blocks(&blocks)?;
    params.behavior_bn1.running_mean = rm1;
    params.behavior_bn1.running_var = rv1;
    params.behavior_bn2.running_mean = rm2;
    params.behavior_bn2.running_var = rv2;
    params.behavior_bn1.momentum = hyper[0];
    params.behavior_bn1.epsilon = hyper[1];
    params.behavior_bn2.momentum = hyper[2];
    params.behavior_bn2.epsilon = hyper[3];
    params.standardizer.mean.copy_from_slice(&smean);
    params.standardizer.sd.copy_from_slice(&ssd);
    Ok(Snapshot {
        config_fingerprint,
        params,
    })
}

impl Snapshot {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, encode_snapshot(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        decode_snapshot(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
