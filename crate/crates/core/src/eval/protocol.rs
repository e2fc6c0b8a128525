use serde::{Deserialize, Serialize};

use super::report::Section;
use crate::calib::FewShotConfig;
use crate::data::PlatformSpec;
use crate::model::FineTuneConfig;
use crate::{Error, Result};

/// Baselines and the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// First source only, `λ = 0`, identity target calibration.
    SourceOnly,
    /// All sources pooled, `λ = 0`, identity target calibration.
    PoolNoadapt,
    /// All sources pooled, `λ > 0`, identity target calibration.
    DannOnly,
    /// The source-only model with every parameter tuned on `k` target rows.
    FinetuneAll,
    /// Adversarial training plus target calibration (moment matching at
    /// `k = 0`, calibration and gate fitting at `k > 0`).
    Adaptms,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SourceOnly,
        Variant::PoolNoadapt,
        Variant::DannOnly,
        Variant::FinetuneAll,
        Variant::Adaptms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::PoolNoadapt => "pool_noadapt",
            Variant::DannOnly => "dann_only",
            Variant::FinetuneAll => "finetune_all",
            Variant::Adaptms => "adaptms",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Where the target rating moments for moment matching come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetStatsMode {
    /// Population moments of every target training label.
    Exact,
    /// Moments of a seeded random sample of target training labels.
    Audited { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Source platform names; the first one is the single source of
    /// `source_only` and `finetune_all`.
    pub sources: Vec<String>,
    pub target: String,
    pub sections: Vec<Section>,
    pub seeds: Vec<u64>,
    pub k_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    /// Transfer settings such as `"A+B->C"`.
    pub pairs: Vec<String>,
    pub target_stats: TargetStatsMode,
    pub fewshot: FewShotConfig,
    pub finetune: FineTuneConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            sources: vec!["A".into(), "B".into()],
            target: "C".into(),
            sections: Section::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            k_grid: vec![0, 50, 200, 1000],
            lambda_grid: vec![0.0, 0.1, 0.5, 1.0],
            pairs: vec!["A->B".into(), "B->C".into(), "A+B->C".into()],
            target_stats: TargetStatsMode::Exact,
            fewshot: FewShotConfig::default(),
            finetune: FineTuneConfig::default(),
        }
    }
}

/// A transfer setting with platform indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub label: String,
    pub sources: Vec<usize>,
    pub target: usize,
}

fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: format!("protocol.{field}"),
        msg: msg.into(),
    }
}

fn lookup(specs: &[PlatformSpec], name: &str, field: &str) -> Result<usize> {
    specs
        .iter()
        .position(|s| s.name == name)
        .ok_or_else(|| config_err(field, format!("unknown platform {name:?}")))
}

/// Parses `"A+B->C"` against the platform names.
pub fn parse_transfer(specs: &[PlatformSpec], text: &str) -> Result<Transfer> {
    let (lhs, rhs) = text
        .split_once("->")
        .ok_or_else(|| config_err("pairs", format!("{text:?} is not of the form SOURCES->TARGET")))?;
    let mut sources = Vec::new();
    for name in lhs.split('+') {
        let p = lookup(specs, name.trim(), "pairs")?;
        if sources.contains(&p) {
            return Err(config_err("pairs", format!("{text:?} repeats a source")));
        }
        sources.push(p);
    }
    let target = lookup(specs, rhs.trim(), "pairs")?;
    if sources.contains(&target) {
        return Err(config_err("pairs", format!("{text:?}: target is also a source")));
    }
    Ok(Transfer {
        label: text.to_string(),
        sources,
        target,
    })
}

impl ProtocolConfig {
    /// Checks that do not need the platform list.
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(config_err("sources", "at least one source platform is required"));
        }
        if self.sources.contains(&self.target) {
            return Err(config_err("target", "the target must not be a source"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(config_err("seeds", "seeds must be distinct"));
        }
        if self.sections.contains(&Section::Fewshot) && self.k_grid.is_empty() {
            return Err(config_err("k_grid", "the few-shot section needs at least one k"));
        }
        if self.sections.contains(&Section::LambdaSweep) && self.lambda_grid.is_empty() {
            return Err(config_err("lambda_grid", "the sweep needs at least one value"));
        }
        for &l in &self.lambda_grid {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(config_err("lambda_grid", format!("{l} must be finite and >= 0")));
            }
        }
        if let TargetStatsMode::Audited { size } = self.target_stats {
            if size < 2 {
                return Err(config_err("target_stats.size", "an audited sample needs at least 2 labels"));
            }
        }
        if !(self.fewshot.lr >= 0.0) || !self.fewshot.lr.is_finite() {
            return Err(config_err("fewshot.lr", "must be finite and >= 0"));
        }
        self.finetune.validate().map_err(|e| match e {
            Error::Config { field, msg } => config_err(&field, msg),
            other => other,
        })?;
        Ok(())
    }

    /// Resolves platform names; returns `(sources, target, pairs)`.
    pub fn resolve(&self, specs: &[PlatformSpec]) -> Result<(Vec<usize>, usize, Vec<Transfer>)> {
        self.validate()?;
        let sources = self
            .sources
            .iter()
            .map(|n| lookup(specs, n, "sources"))
            .collect::<Result<Vec<_>>>()?;
        let target = lookup(specs, &self.target, "target")?;
        let pairs = self
            .pairs
            .iter()
            .map(|p| parse_transfer(specs, p))
            .collect::<Result<Vec<_>>>()?;
        Ok((sources, target, pairs))
    }
}
