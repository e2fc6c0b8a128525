//! Frozen text encoder interface and a deterministic signed feature-hashing
//! implementation, with an on-disk cache of corpus embeddings.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::fingerprint::of_json;
use crate::nn::Matrix;
use crate::wire::{Reader, Writer};
use crate::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub hash_seed: u64,
    pub ngram_orders: BTreeSet<usize>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
            hash_seed: 0x005e_ed0f_7e47,
            ngram_orders: [1, 2].into_iter().collect(),
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config {
                field: "embed.dim".into(),
                msg: "must be > 0".into(),
            });
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config {
                field: "embed.ngram_orders".into(),
                msg: "need at least one positive order".into(),
            });
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        of_json(self)
    }
}

/// A frozen map from a token sequence to a fixed-width vector. A pretrained
/// language model would implement this same interface.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[u32]) -> Vec<f64>;
    /// Identifies the map; two embedders with equal fingerprints must agree
    /// on every input.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    config: EmbedderConfig,
}

impl HashingEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, tokens: &[u32]) -> Vec<f64> {
        embed_text(tokens, &self.config)
    }

    fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn ngram_hash(seed: u64, gram: &[u32]) -> u64 {
    let mut h = mix64(seed ^ (gram.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for &t in gram {
        h = mix64(h ^ u64::from(t).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    h
}

/// Each n-gram adds ±1 at a hashed coordinate; the sum is scaled to unit
/// L2 norm. An empty sequence, or one whose contributions cancel, maps to
/// the zero vector.
pub fn embed_text(tokens: &[u32], config: &EmbedderConfig) -> Vec<f64> {
    let mut v = vec![0.0; config.dim];
    for &n in &config.ngram_orders {
        if n == 0 || tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            let h = ngram_hash(config.hash_seed, gram);
            let idx = (h % config.dim as u64) as usize;
            v[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Embeddings of every corpus instance, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub corpus_seed: u64,
    pub corpus_fingerprint: String,
    pub config: EmbedderConfig,
    pub rows: Matrix,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    /// Fingerprint of the embedding values themselves.
    pub fn content_fingerprint(&self) -> String {
        crate::fingerprint::sha256_hex(&encode_cache(self))
    }
}

pub fn embed_corpus(corpus: &Corpus, config: &EmbedderConfig) -> Result<EmbeddingTable> {
    let embedder = HashingEmbedder::new(config.clone())?;
    embed_corpus_with(corpus, &embedder, config)
}

pub fn embed_corpus_with(corpus: &Corpus, embedder: &dyn TextEmbedder, config: &EmbedderConfig) -> Result<EmbeddingTable> {
    let dim = embedder.dim();
    let mut data = Vec::with_capacity(corpus.instances.len() * dim);
    for inst in &corpus.instances {
        data.extend(embedder.embed(&inst.tokens));
    }
    Ok(EmbeddingTable {
        corpus_seed: corpus.seed,
        corpus_fingerprint: corpus.fingerprint(),
        config: config.clone(),
        rows: Matrix::from_vec(corpus.instances.len(), dim, data)?,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"ADMSEMB\0";
const CACHE_VERSION: u32 = 1;

/// Binary cache: magic, version, dim, hash seed, n-gram orders, corpus seed,
/// corpus fingerprint, row count, then row-major little-endian floats.
pub fn encode_cache(table: &EmbeddingTable) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    w.u64(table.config.dim as u64);
    w.u64(table.config.hash_seed);
    w.u32(table.config.ngram_orders.len() as u32);
    for &n in &table.config.ngram_orders {
        w.u32(n as u32);
    }
    w.u64(table.corpus_seed);
    w.str(&table.corpus_fingerprint);
    w.u64(table.rows.rows() as u64);
    w.f64s(table.rows.data());
    w.finish()
}

pub fn decode_cache(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = Reader::new(bytes, "embedding cache");
    if r.take(CACHE_MAGIC.len())? != CACHE_MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let dim = usize::try_from(r.u64()?).map_err(|_| r.err("dimension overflows"))?;
    let hash_seed = r.u64()?;
    let n_orders = r.u32()?;
    let mut ngram_orders = BTreeSet::new();
    for _ in 0..n_orders {
        ngram_orders.insert(r.u32()? as usize);
    }
    let config = EmbedderConfig {
        dim,
        hash_seed,
        ngram_orders,
    };
    config.validate().map_err(|e| r.err(e.to_string()))?;
    let corpus_seed = r.u64()?;
    let corpus_fingerprint = r.str()?;
    let n = usize::try_from(r.u64()?).map_err(|_| r.err("row count overflows"))?;
    let count = n.checked_mul(dim).ok_or_else(|| r.err("table size overflows"))?;
    let data = r.f64s(count)?;
    r.finish()?;
    Ok(EmbeddingTable {
        corpus_seed,
        corpus_fingerprint,
        config,
        rows: Matrix::from_vec(n, dim, data)?,
    })
}

/// Returns the cached table at `path` when it matches the corpus and
/// config; otherwise recomputes, warns, and rewrites the cache.
pub fn load_or_compute(path: &Path, corpus: &Corpus, config: &EmbedderConfig) -> Result<EmbeddingTable> {
    if path.exists() {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        match decode_cache(&bytes) {
            Ok(t) if t.corpus_seed == corpus.seed && t.config == *config && t.corpus_fingerprint == corpus.fingerprint() => {
                return Ok(t)
            }
            Ok(_) => log::warn!("embedding cache {} does not match corpus/config; recomputing", path.display()),
            Err(e) => log::warn!("embedding cache {} unreadable ({e}); recomputing", path.display()),
        }
    }
    let table = embed_corpus(corpus, config)?;
    std::fs::write(path, encode_cache(&table)).map_err(|e| Error::io(path, e))?;
    Ok(table)
}
