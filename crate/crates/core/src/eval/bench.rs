use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, rmse};
use super::probe::discriminator_accuracy;
use super::protocol::{ProtocolConfig, TargetStatsMode, Transfer, Variant};
use super::report::{AlignmentCell, Cell, EvalReport, Section};
use crate::calib::{fit_supervised_fewshot, fit_unsupervised, FewShotConfig, TargetRatingStats};
use crate::data::{impute_missing, time_split, Corpus, ImputationStats, InstanceId, PlatformSplit};
use crate::embed::{embed_corpus, load_or_compute, EmbedderConfig, EmbeddingTable};
use crate::fingerprint::derive_seed;
use crate::model::{
    finetune_all, predict_latent, train, Architecture, Block, Dataset, ModelParams, TrainConfig, TrainLog, TrainSets,
};
use crate::{Error, Result};

/// A corpus with its splits, imputation and frozen embeddings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub imputed: Corpus,
    pub imputation: ImputationStats,
    pub splits: Vec<PlatformSplit>,
    pub embeddings: EmbeddingTable,
}

/// Splits, imputes and embeds `corpus`, reading and refreshing the
/// embedding cache at `cache` when given.
pub fn prepare(corpus: Corpus, embed: &EmbedderConfig, cache: Option<&Path>) -> Result<Prepared> {
    let splits = time_split(&corpus)?;
    let (imputed, imputation) = impute_missing(&corpus, &splits)?;
    let embeddings = match cache {
        Some(path) => load_or_compute(path, &corpus, embed)?,
        None => embed_corpus(&corpus, embed)?,
    };
    Ok(Prepared {
        corpus,
        imputed,
        imputation,
        splits,
        embeddings,
    })
}

/// Instances used to fit something (weights, calibration, statistics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub purpose: String,
    pub ids: Vec<InstanceId>,
}

/// Result of intersecting every fitting set with every evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hygiene {
    pub fit_sets: usize,
    pub test_sets: usize,
    /// `(fitting set, test set, shared instances)` for each non-empty
    /// intersection.
    pub overlaps: Vec<(String, String, usize)>,
}

impl Hygiene {
    pub fn is_clean(&self) -> bool {
        self.overlaps.is_empty()
    }
}

/// A structural check made while running, such as the frozen blocks of a
/// few-shot fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub what: String,
    pub seed: u64,
    pub ok: bool,
}

/// One model trained during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub sources: Vec<usize>,
    pub target: usize,
    pub config: TrainConfig,
    pub log: TrainLog,
    /// Wall-clock training time.
    pub seconds: f64,
}

/// Row labels of the ablation section.
pub const ABLATION_ROWS: [&str; 6] = [
    "full",
    "no_calibration",
    "no_adversarial",
    "no_gating",
    "no_behavior",
    "text_only",
];

/// Column label of a λ value in the sweep section.
pub fn lambda_label(lambda: f64) -> String {
    format!("{lambda:?}")
}

/// Column label of a few-shot size.
pub fn k_label(k: usize) -> String {
    format!("k={k}")
}

/// Runs baselines and protocols over one prepared corpus, caching trained
/// models within a seed.
pub struct Benchmark<'a> {
    data: Dataset<'a>,
    splits: Vec<PlatformSplit>,
    base: TrainConfig,
    protocol: ProtocolConfig,
    sources: Vec<usize>,
    target: usize,
    pairs: Vec<Transfer>,
    models: BTreeMap<String, ModelParams>,
    trained: Vec<TrainRecord>,
    fits: Vec<FitRecord>,
    tests: Vec<FitRecord>,
    audits: Vec<Audit>,
    report: EvalReport,
}

impl<'a> Benchmark<'a> {
    pub fn new(
        prepared: &'a Prepared,
        base: TrainConfig,
        protocol: ProtocolConfig,
        config_fingerprint: String,
    ) -> Result<Self> {
        base.validate()?;
        let (sources, target, pairs) = protocol.resolve(&prepared.corpus.specs)?;
        let data = Dataset::new(&prepared.imputed, &prepared.embeddings, &prepared.imputation)?;
        let target_train = prepared.splits[target].train.len();
        if let Some(&k) = protocol.k_grid.iter().find(|&&k| k > target_train) {
            return Err(Error::Config {
                field: "protocol.k_grid".into(),
                msg: format!("k = {k} exceeds the {target_train} target training rows"),
            });
        }
        let report = EvalReport::new(config_fingerprint, prepared.corpus.fingerprint(), protocol.seeds.clone());
        Ok(Self {
            data,
            splits: prepared.splits.clone(),
            base,
            protocol,
            sources,
            target,
            pairs,
            models: BTreeMap::new(),
            trained: Vec::new(),
            fits: Vec::new(),
            tests: Vec::new(),
            audits: Vec::new(),
            report,
        })
    }

    pub fn report(&self) -> &EvalReport {
        &self.report
    }

    pub fn into_report(self) -> EvalReport {
        self.report
    }

    pub fn audits(&self) -> &[Audit] {
        &self.audits
    }

    /// Every model trained so far, in training order.
    pub fn trained(&self) -> &[TrainRecord] {
        &self.trained
    }

    pub fn fit_records(&self) -> &[FitRecord] {
        &self.fits
    }

    pub fn test_records(&self) -> &[FitRecord] {
        &self.tests
    }

    /// The main unsupervised transfer (configured sources to target).
    pub fn main_transfer(&self) -> Transfer {
        Transfer {
            label: format!("{}->{}", self.protocol.sources.join("+"), self.protocol.target),
            sources: self.sources.clone(),
            target: self.target,
        }
    }

    /// Intersects every fitting set with every test set by instance id.
    pub fn hygiene(&self) -> Hygiene {
        let tests: Vec<(String, BTreeSet<InstanceId>)> = self
            .tests
            .iter()
            .map(|t| (t.purpose.clone(), t.ids.iter().copied().collect()))
            .collect();
        let mut overlaps = Vec::new();
        for f in &self.fits {
            for (name, ids) in &tests {
                let shared = f.ids.iter().filter(|id| ids.contains(id)).count();
                if shared > 0 {
                    overlaps.push((f.purpose.clone(), name.clone(), shared));
                }
            }
        }
        Hygiene {
            fit_sets: self.fits.len(),
            test_sets: self.tests.len(),
            overlaps,
        }
    }

    fn record_fit(&mut self, purpose: String, idx: &[usize]) {
        if !self.fits.iter().any(|f| f.purpose == purpose) {
            self.fits.push(FitRecord {
                purpose,
                ids: self.data.ids_of(idx),
            });
        }
    }

    fn split_rows(&self, platform: usize, which: fn(&PlatformSplit) -> std::ops::Range<usize>) -> Vec<usize> {
        which(&self.splits[platform]).collect()
    }

    fn test_rows(&mut self, target: usize) -> Vec<usize> {
        let rows = self.split_rows(target, |s| s.test.clone());
        let purpose = format!("test platform {target}");
        if !self.tests.iter().any(|t| t.purpose == purpose) {
            self.tests.push(FitRecord {
                purpose,
                ids: self.data.ids_of(&rows),
            });
        }
        rows
    }

    /// Base configuration with the run seed and the given variant switches.
    pub fn train_config(&self, seed: u64, lambda: f64, use_behavior: bool, use_gate: bool) -> TrainConfig {
        TrainConfig {
            seed,
            lambda,
            use_behavior,
            use_gate,
            ..self.base.clone()
        }
    }

    /// Trains (or fetches) the model for `sources → target` under `config`.
    pub fn model(&mut self, sources: &[usize], target: usize, config: &TrainConfig) -> Result<ModelParams> {
        let key = format!("{sources:?}->{target} {}", config.fingerprint());
        if let Some(p) = self.models.get(&key) {
            return Ok(p.clone());
        }
        let sets = TrainSets {
            source_train: sources.iter().flat_map(|&p| self.splits[p].train.clone()).collect(),
            source_val: sources.iter().flat_map(|&p| self.splits[p].val.clone()).collect(),
            target_train: self.split_rows(target, |s| s.train.clone()),
        };
        let tag = format!("{sources:?}->{target} seed {}", config.seed);
        self.record_fit(format!("source train {tag}"), &sets.source_train);
        self.record_fit(format!("source val {tag}"), &sets.source_val);
        self.record_fit(format!("target unlabeled {tag}"), &sets.target_train);
        log::info!(
            "training {tag} lambda={} behavior={} gate={}",
            config.lambda,
            config.use_behavior,
            config.use_gate
        );
        let start = Instant::now();
        let (params, log) = train(&self.data, &sets, config)?;
        self.trained.push(TrainRecord {
            sources: sources.to_vec(),
            target,
            config: config.clone(),
            log,
            seconds: start.elapsed().as_secs_f64(),
        });
        self.models.insert(key, params.clone());
        Ok(params)
    }

    fn target_stats(&mut self, target: usize, seed: u64) -> Result<TargetRatingStats> {
        let mut rows = self.split_rows(target, |s| s.train.clone());
        let purpose = match self.protocol.target_stats {
            TargetStatsMode::Exact => format!("target rating stats platform {target}"),
            TargetStatsMode::Audited { size } => {
                if size > rows.len() {
                    return Err(Error::Config {
                        field: "protocol.target_stats.size".into(),
                        msg: format!("{size} exceeds the {} target training rows", rows.len()),
                    });
                }
                let label = format!("audit/{target}");
                rows.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &label)));
                rows.truncate(size);
                format!("audited rating sample platform {target} seed {seed}")
            }
        };
        self.record_fit(purpose, &rows);
        TargetRatingStats::from_labels(&self.data.labels_of(&rows))
    }

    /// The first `k` rows of a seeded permutation of the target training
    /// split, so larger budgets extend smaller ones.
    pub fn fewshot_rows(&mut self, target: usize, seed: u64, k: usize) -> Result<Vec<usize>> {
        let mut rows = self.split_rows(target, |s| s.train.clone());
        if k > rows.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds the {} target training rows",
                rows.len()
            )));
        }
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("fewshot/{target}"))));
        rows.truncate(k);
        if k > 0 {
            self.record_fit(format!("fewshot labels platform {target} seed {seed} k={k}"), &rows);
        }
        Ok(rows)
    }

    /// Target calibration of a trained model: moment matching on the
    /// target training rows, then (for `k > 0`) calibration and gate
    /// fitting on `k` labeled rows starting from the moment-matched pair.
    pub fn calibrate(
        &mut self,
        params: &ModelParams,
        target: usize,
        seed: u64,
        k: usize,
        arch: Architecture,
    ) -> Result<ModelParams> {
        let stats = self.target_stats(target, seed)?;
        let unlabeled = self.split_rows(target, |s| s.train.clone());
        self.record_fit(format!("moment matching inputs platform {target}"), &unlabeled);
        let s = predict_latent(params, &self.data.batch(&unlabeled), arch)?;
        let (a, b) = fit_unsupervised(&s, &stats)?;
        let mut out = params.clone();
        out.calib.set_pair(target, a, b)?;
        if k == 0 {
            return Ok(out);
        }
        let rows = self.fewshot_rows(target, seed, k)?;
        let config = FewShotConfig {
            seed: derive_seed(seed, &format!("fewshot-fit/{k}")),
            ..self.protocol.fewshot.clone()
        };
        let (fitted, _) = fit_supervised_fewshot(
            &out,
            &self.data.batch(&rows),
            &self.data.labels_of(&rows),
            target,
            arch,
            &config,
        )?;
        let frozen_ok = Block::ALL
            .into_iter()
            .filter(|b| !matches!(b, Block::GateW | Block::GateB | Block::CalibScale | Block::CalibBias))
            .all(|b| fitted.block_fingerprint(b) == out.block_fingerprint(b))
            && (0..out.calib.platforms())
                .filter(|&p| p != target)
                .all(|p| fitted.calib.pair(p).ok() == out.calib.pair(p).ok());
        self.audits.push(Audit {
            what: format!("fewshot k={k} leaves encoder, head and discriminator unchanged"),
            seed,
            ok: frozen_ok,
        });
        Ok(fitted)
    }

    /// Calibrated predictions of `variant` on the target test split.
    pub fn run_baseline(&mut self, variant: Variant, transfer: &Transfer, seed: u64, k: usize) -> Result<Vec<f64>> {
        let target = transfer.target;
        let lambda = self.base.lambda;
        let (params, arch) = match variant {
            Variant::SourceOnly => {
                let cfg = self.train_config(seed, 0.0, true, true);
                (self.model(&transfer.sources[..1], target, &cfg)?, cfg.architecture())
            }
            Variant::PoolNoadapt => {
                let cfg = self.train_config(seed, 0.0, true, true);
                (self.model(&transfer.sources, target, &cfg)?, cfg.architecture())
            }
            Variant::DannOnly => {
                if lambda <= 0.0 {
                    return Err(Error::Config {
                        field: "train.lambda".into(),
                        msg: "dann_only needs lambda > 0".into(),
                    });
                }
                let cfg = self.train_config(seed, lambda, true, true);
                (self.model(&transfer.sources, target, &cfg)?, cfg.architecture())
            }
            Variant::FinetuneAll => {
                let cfg = self.train_config(seed, 0.0, true, true);
                let source = self.model(&transfer.sources[..1], target, &cfg)?;
                let rows = self.fewshot_rows(target, seed, k)?;
                let tune_cfg = TrainConfig {
                    seed: derive_seed(seed, &format!("finetune/{k}")),
                    ..cfg.clone()
                };
                let (tuned, _) = finetune_all(&source, &self.data, &rows, &tune_cfg, &self.protocol.finetune)?;
                if k == 0 {
                    let same = Block::ALL
                        .into_iter()
                        .all(|b| tuned.block_fingerprint(b) == source.block_fingerprint(b));
                    self.audits.push(Audit {
                        what: "finetune_all at k=0 equals its source initialization".into(),
                        seed,
                        ok: same && tuned == source,
                    });
                }
                (tuned, cfg.architecture())
            }
            Variant::Adaptms => {
                let cfg = self.train_config(seed, lambda, true, true);
                let model = self.model(&transfer.sources, target, &cfg)?;
                let arch = cfg.architecture();
                (self.calibrate(&model, target, seed, k, arch)?, arch)
            }
        };
        self.predict(&params, target, arch)
    }

    fn predict(&mut self, params: &ModelParams, target: usize, arch: Architecture) -> Result<Vec<f64>> {
        let rows = self.test_rows(target);
        let s = predict_latent(params, &self.data.batch(&rows), arch)?;
        let (a, b) = params.calib.pair(target)?;
        Ok(s.into_iter().map(|v| a * v + b).collect())
    }

    fn push(&mut self, section: Section, row: &str, column: &str, seed: u64, target: usize, pred: &[f64]) -> Result<()> {
        let rows = self.test_rows(target);
        let labels = self.data.labels_of(&rows);
        self.report.cells.push(Cell {
            section,
            row: row.to_string(),
            column: column.to_string(),
            seed,
            n: labels.len(),
            rmse: rmse(pred, &labels)?,
            mae: mae(pred, &labels)?,
        });
        Ok(())
    }

    fn push_alignment(&mut self, transfer: &Transfer, seed: u64, lambda: f64) -> Result<()> {
        if self
            .report
            .alignment
            .iter()
            .any(|a| a.seed == seed && a.lambda == lambda)
        {
            return Ok(());
        }
        let cfg = self.train_config(seed, lambda, true, true);
        let params = self.model(&transfer.sources, transfer.target, &cfg)?;
        let mut held_out = Vec::new();
        for &p in transfer.sources.iter().chain([&transfer.target]) {
            held_out.extend(self.test_rows(p));
        }
        let acc = discriminator_accuracy(&params, &self.data, &held_out, cfg.architecture())?;
        self.report.alignment.push(AlignmentCell {
            lambda,
            seed,
            accuracy: acc.accuracy,
            chance: acc.chance,
            n: acc.n,
        });
        Ok(())
    }

    /// Source-only, pooled, adversarial and full pipeline at `k = 0`, plus
    /// discriminator accuracy at `λ = 0` and the configured `λ`.
    pub fn run_unsupervised(&mut self, seed: u64) -> Result<()> {
        let t = self.main_transfer();
        for v in [Variant::SourceOnly, Variant::PoolNoadapt, Variant::DannOnly, Variant::Adaptms] {
            let pred = self.run_baseline(v, &t, seed, 0)?;
            self.push(Section::Unsupervised, v.name(), &t.label, seed, t.target, &pred)?;
        }
        self.push_alignment(&t, seed, 0.0)?;
        self.push_alignment(&t, seed, self.base.lambda)?;
        Ok(())
    }

    /// All-parameter fine-tuning against calibration and gate fitting over
    /// the `k` grid.
    pub fn run_fewshot(&mut self, seed: u64) -> Result<()> {
        let t = self.main_transfer();
        for k in self.protocol.k_grid.clone() {
            for v in [Variant::FinetuneAll, Variant::Adaptms] {
                let pred = self.run_baseline(v, &t, seed, k)?;
                self.push(Section::Fewshot, v.name(), &k_label(k), seed, t.target, &pred)?;
            }
        }
        Ok(())
    }

    /// Pooled training against the full pipeline for each transfer setting.
    pub fn run_pairwise(&mut self, seed: u64) -> Result<()> {
        for t in self.pairs.clone() {
            for v in [Variant::PoolNoadapt, Variant::Adaptms] {
                let pred = self.run_baseline(v, &t, seed, 0)?;
                self.push(Section::Pairwise, v.name(), &t.label, seed, t.target, &pred)?;
            }
        }
        Ok(())
    }

    /// The full pipeline at each `λ` of the grid.
    pub fn run_lambda_sweep(&mut self, seed: u64) -> Result<()> {
        let t = self.main_transfer();
        for lambda in self.protocol.lambda_grid.clone() {
            let cfg = self.train_config(seed, lambda, true, true);
            let model = self.model(&t.sources, t.target, &cfg)?;
            let params = self.calibrate(&model, t.target, seed, 0, cfg.architecture())?;
            let pred = self.predict(&params, t.target, cfg.architecture())?;
            self.push(Section::LambdaSweep, "adaptms", &lambda_label(lambda), seed, t.target, &pred)?;
            self.push_alignment(&t, seed, lambda)?;
        }
        Ok(())
    }

    /// Component ablations of the full pipeline at `k = 0`.
    pub fn run_ablation(&mut self, seed: u64) -> Result<()> {
        let t = self.main_transfer();
        let lambda = self.base.lambda;
        for row in ABLATION_ROWS {
            let (cfg, calibrated) = match row {
                "full" => (self.train_config(seed, lambda, true, true), true),
                "no_calibration" => (self.train_config(seed, lambda, true, true), false),
                "no_adversarial" => (self.train_config(seed, 0.0, true, true), true),
                "no_gating" => (self.train_config(seed, lambda, true, false), true),
                "no_behavior" => (self.train_config(seed, lambda, false, true), true),
                "text_only" => (self.train_config(seed, 0.0, false, false), true),
                _ => unreachable!("fixed row set"),
            };
            let arch = cfg.architecture();
            let model = self.model(&t.sources, t.target, &cfg)?;
            let params = if calibrated {
                self.calibrate(&model, t.target, seed, 0, arch)?
            } else {
                model
            };
            let pred = self.predict(&params, t.target, arch)?;
            self.push(Section::Ablation, row, &t.label, seed, t.target, &pred)?;
        }
        Ok(())
    }

    pub fn run_section(&mut self, section: Section, seed: u64) -> Result<()> {
        match section {
            Section::Unsupervised => self.run_unsupervised(seed),
            Section::Fewshot => self.run_fewshot(seed),
            Section::Pairwise => self.run_pairwise(seed),
            Section::LambdaSweep => self.run_lambda_sweep(seed),
            Section::Ablation => self.run_ablation(seed),
        }
    }

    /// Every configured section for every seed. Models are cached within a
    /// seed and dropped after it.
    pub fn run(&mut self) -> Result<()> {
        for seed in self.protocol.seeds.clone() {
            for section in self.protocol.sections.clone() {
                log::info!("seed {seed}: {}", section.name());
                self.run_section(section, seed)?;
            }
            self.models.clear();
        }
        self.report.validate()
    }
}
