//! Run configuration: one TOML document with `generate`, `embed`, `train`,
//! `protocol` and `io` tables. Every table and field is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PlatformSpec;
use crate::embed::EmbedderConfig;
use crate::eval::ProtocolConfig;
use crate::fingerprint::of_json;
use crate::model::TrainConfig;
use crate::{Error, Result};

/// Smallest per-platform corpus the chronological split accepts here.
pub const MIN_INSTANCES_PER_PLATFORM: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub n_per_platform: usize,
    pub seed: u64,
    pub platforms: Vec<PlatformSpec>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_per_platform: 10_000,
            seed: 2024,
            platforms: PlatformSpec::benchmark(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Directory for corpora, snapshots, calibration tables and reports.
    pub out_dir: PathBuf,
    /// Read this corpus instead of generating one.
    pub corpus: Option<PathBuf>,
    /// Embedding cache file; embeddings are recomputed when absent.
    pub embedding_cache: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            corpus: None,
            embedding_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generate: GenerateConfig,
    pub embed: EmbedderConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
    pub io: IoConfig,
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e.span().map(|s| key_path(text, s.start)).unwrap_or_else(|| "<document>".into()),
            msg: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generate;
        if g.n_per_platform < MIN_INSTANCES_PER_PLATFORM {
            return Err(Error::Config {
                field: "generate.n_per_platform".into(),
                msg: format!("{} is below the minimum of {MIN_INSTANCES_PER_PLATFORM}", g.n_per_platform),
            });
        }
        if g.platforms.len() < 2 {
            return Err(Error::Config {
                field: "generate.platforms".into(),
                msg: "at least two platforms are required".into(),
            });
        }
        for (i, spec) in g.platforms.iter().enumerate() {
            spec.validate().map_err(|e| Error::Config {
                field: format!("generate.platforms[{i}]"),
                msg: e.to_string(),
            })?;
        }
        self.embed.validate().map_err(|e| prefixed("embed", e))?;
        self.train.validate()?;
        self.protocol.resolve(&g.platforms)?;
        Ok(())
    }

    /// Fingerprint of everything that affects results (all but `io`).
    pub fn fingerprint(&self) -> String {
        of_json(&(&self.generate, &self.embed, &self.train, &self.protocol))
    }
}

fn prefixed(table: &str, e: Error) -> Error {
    match e {
        Error::Config { field, msg } if !field.starts_with(table) => Error::Config {
            field: format!("{table}.{field}"),
            msg,
        },
        Error::Config { .. } => e,
        other => Error::Config {
            field: table.into(),
            msg: other.to_string(),
        },
    }
}

/// Dotted key at byte offset `at`: the last table header before it plus
/// the key on its line.
fn key_path(text: &str, at: usize) -> String {
    let at = at.min(text.len());
    let mut table = String::new();
    let mut line_start = 0;
    for (offset, line) in line_offsets(text) {
        if offset > at {
            break;
        }
        line_start = offset;
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
    }
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = match line.split_once('=') {
        Some((k, _)) if !line.trim_start().starts_with('[') => k.trim().trim_matches('"').to_string(),
        _ => String::new(),
    };
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<document>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

fn line_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_inclusive('\n').scan(0, |pos, line| {
        let start = *pos;
        *pos += line.len();
        Some((start, line))
    })
}
