use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_sd, relative_gain};
use crate::{Error, Result};

/// Report section, one per protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Unsupervised,
    Fewshot,
    Pairwise,
    LambdaSweep,
    Ablation,
}

impl Section {
    pub const ALL: [Section; 5] = [
        Section::Unsupervised,
        Section::Fewshot,
        Section::Pairwise,
        Section::LambdaSweep,
        Section::Ablation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Section::Unsupervised => "unsupervised",
            Section::Fewshot => "fewshot",
            Section::Pairwise => "pairwise",
            Section::LambdaSweep => "lambda_sweep",
            Section::Ablation => "ablation",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Section::Unsupervised => "Unsupervised transfer (k = 0)",
            Section::Fewshot => "Few-shot adaptation",
            Section::Pairwise => "Pairwise transfer",
            Section::LambdaSweep => "Sensitivity to the alignment weight",
            Section::Ablation => "Ablation (k = 0)",
        }
    }

    pub fn parse(s: &str) -> Option<Section> {
        Section::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// One (section, row, column, seed) measurement on the target test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub section: Section,
    pub row: String,
    pub column: String,
    pub seed: u64,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
}

/// Platform-discriminator accuracy after training at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCell {
    pub lambda: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub chance: f64,
    pub n: usize,
}

/// Mean ± sample sd over seeds for one (section, row, column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub section: Section,
    pub row: String,
    pub column: String,
    pub seeds: usize,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub mae_mean: f64,
    pub mae_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub corpus_hash: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
    pub alignment: Vec<AlignmentCell>,
}

/// Row label of the pairwise relative-gain line.
pub const GAIN_ROW: &str = "relative_gain";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    pub fn new(config_fingerprint: String, corpus_hash: String, seeds: Vec<u64>) -> Self {
        Self {
            config_fingerprint,
            corpus_hash,
            seeds,
            cells: Vec::new(),
            alignment: Vec::new(),
        }
    }

    /// Appends the cells of `other`, which must describe the same run.
    pub fn merge(&mut self, other: EvalReport) -> Result<()> {
        if other.config_fingerprint != self.config_fingerprint || other.corpus_hash != self.corpus_hash {
            return Err(Error::FingerprintMismatch {
                what: "report".into(),
                expected: self.config_fingerprint.clone(),
                found: other.config_fingerprint,
            });
        }
        self.cells.extend(other.cells);
        self.alignment.extend(other.alignment);
        Ok(())
    }

    /// Cells of `section` in insertion order.
    pub fn section(&self, section: Section) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.section == section)
    }

    /// Distinct row labels of a section, in first-appearance order.
    pub fn rows(&self, section: Section) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.section(section) {
            if !out.contains(&c.row) {
                out.push(c.row.clone());
            }
        }
        out
    }

    /// Distinct column labels of a section, in first-appearance order.
    pub fn columns(&self, section: Section) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.section(section) {
            if !out.contains(&c.column) {
                out.push(c.column.clone());
            }
        }
        out
    }

    /// Aggregate of one (section, row, column), if any cell exists.
    pub fn aggregate_of(&self, section: Section, row: &str, column: &str) -> Option<Aggregate> {
        let cells: Vec<&Cell> = self
            .section(section)
            .filter(|c| c.row == row && c.column == column)
            .collect();
        if cells.is_empty() {
            return None;
        }
        let rmse: Vec<f64> = cells.iter().map(|c| c.rmse).collect();
        let mae: Vec<f64> = cells.iter().map(|c| c.mae).collect();
        let (rmse_mean, rmse_sd) = mean_sd(&rmse).expect("nonempty");
        let (mae_mean, mae_sd) = mean_sd(&mae).expect("nonempty");
        Some(Aggregate {
            section,
            row: row.to_string(),
            column: column.to_string(),
            seeds: cells.len(),
            rmse_mean,
            rmse_sd,
            mae_mean,
            mae_sd,
        })
    }

    /// All aggregates, by section then first-appearance row and column.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut out = Vec::new();
        for section in Section::ALL {
            for row in self.rows(section) {
                for column in self.columns(section) {
                    out.extend(self.aggregate_of(section, &row, &column));
                }
            }
        }
        out
    }

    /// Mean RMSE of one (section, row, column).
    pub fn mean_rmse(&self, section: Section, row: &str, column: &str) -> Option<f64> {
        self.aggregate_of(section, row, column).map(|a| a.rmse_mean)
    }

    /// Relative gains of `model` over `baseline` per pairwise column, as
    /// `(column, rmse gain, mae gain)`.
    pub fn pairwise_gains(&self, baseline: &str, model: &str) -> Result<Vec<(String, f64, f64)>> {
        let mut out = Vec::new();
        for column in self.columns(Section::Pairwise) {
            let (Some(b), Some(m)) = (
                self.aggregate_of(Section::Pairwise, baseline, &column),
                self.aggregate_of(Section::Pairwise, model, &column),
            ) else {
                continue;
            };
            out.push((
                column,
                relative_gain(b.rmse_mean, m.rmse_mean)?,
                relative_gain(b.mae_mean, m.mae_mean)?,
            ));
        }
        Ok(out)
    }

    /// Cell-level consistency: finite metrics with `RMSE ≥ MAE ≥ 0`, and
    /// every aggregate covering exactly the configured seeds.
    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            if !c.rmse.is_finite() || !c.mae.is_finite() {
                return Err(Error::NonFinite(format!("{} {} {}", c.section.name(), c.row, c.column)));
            }
            // Allow for rounding when all errors are equal.
            if c.mae < 0.0 || c.rmse < c.mae * (1.0 - 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "{} {} {} seed {}: rmse {} < mae {}",
                    c.section.name(),
                    c.row,
                    c.column,
                    c.seed,
                    c.rmse,
                    c.mae
                )));
            }
        }
        for a in self.aggregates() {
            if a.seeds != self.seeds.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} {} {}: {} seeds, configured {}",
                    a.section.name(),
                    a.row,
                    a.column,
                    a.seeds,
                    self.seeds.len()
                )));
            }
        }
        Ok(())
    }

    /// One line per cell, preceded by a comment line carrying the
    /// fingerprints.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# adaptms-report v1 config={} corpus={}\nsection,row,column,seed,n,rmse,mae\n",
            self.config_fingerprint, self.corpus_hash
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.section.name(),
                csv_field(&c.row),
                csv_field(&c.column),
                c.seed,
                c.n,
                c.rmse,
                c.mae
            );
        }
        out
    }

    /// Alignment measurements as CSV.
    pub fn alignment_csv(&self) -> String {
        let mut out = format!(
            "# adaptms-alignment v1 config={} corpus={}\nlambda,seed,n,accuracy,chance\n",
            self.config_fingerprint, self.corpus_hash
        );
        for a in &self.alignment {
            let _ = writeln!(out, "{},{},{},{},{}", a.lambda, a.seed, a.n, a.accuracy, a.chance);
        }
        out
    }

    /// Nested aggregate form plus the raw cells.
    pub fn to_json(&self) -> String {
        let sections: Vec<serde_json::Value> = Section::ALL
            .into_iter()
            .filter(|s| self.section(*s).next().is_some())
            .map(|s| {
                let rows: Vec<serde_json::Value> = self
                    .rows(s)
                    .into_iter()
                    .map(|row| {
                        let columns: Vec<serde_json::Value> = self
                            .columns(s)
                            .into_iter()
                            .filter_map(|col| self.aggregate_of(s, &row, &col))
                            .map(|a| {
                                serde_json::json!({
                                    "column": a.column,
                                    "seeds": a.seeds,
                                    "rmse_mean": a.rmse_mean,
                                    "rmse_sd": a.rmse_sd,
                                    "mae_mean": a.mae_mean,
                                    "mae_sd": a.mae_sd,
                                })
                            })
                            .collect();
                        serde_json::json!({ "row": row, "columns": columns })
                    })
                    .collect();
                serde_json::json!({ "section": s.name(), "rows": rows })
            })
            .collect();
        let value = serde_json::json!({
            "format": "adaptms-report v1",
            "config_fingerprint": self.config_fingerprint,
            "corpus_hash": self.corpus_hash,
            "seeds": self.seeds,
            "sections": sections,
            "cells": self.cells,
            "alignment": self.alignment,
        });
        let mut s = serde_json::to_string_pretty(&value).expect("plain data serialises");
        s.push('\n');
        s
    }

    /// Human-readable tables, one per section present.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for section in Section::ALL {
            let columns = self.columns(section);
            if columns.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{} (RMSE, mean ± sd over {} seeds)", section.title(), self.seeds.len());
            let _ = write!(out, "{:<28}", "");
            for c in &columns {
                let _ = write!(out, "{c:>16}");
            }
            out.push('\n');
            for row in self.rows(section) {
                let _ = write!(out, "{row:<28}");
                for c in &columns {
                    match self.aggregate_of(section, &row, c) {
                        Some(a) => {
                            let _ = write!(out, "{:>16}", format!("{:.3} ± {:.3}", a.rmse_mean, a.rmse_sd));
                        }
                        None => {
                            let _ = write!(out, "{:>16}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            if section == Section::Pairwise {
                if let Ok(gains) = self.pairwise_gains("pool_noadapt", "adaptms") {
                    let _ = write!(out, "{GAIN_ROW:<28}");
                    for c in &columns {
                        match gains.iter().find(|g| &g.0 == c) {
                            Some(g) => {
                                let _ = write!(out, "{:>16}", format!("{:.1}%", 100.0 * g.1));
                            }
                            None => {
                                let _ = write!(out, "{:>16}", "-");
                            }
                        }
                    }
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        if !self.alignment.is_empty() {
            out.push_str("Discriminator accuracy on held-out rows\n");
            let mut lambdas: Vec<f64> = Vec::new();
            for a in &self.alignment {
                if !lambdas.contains(&a.lambda) {
                    lambdas.push(a.lambda);
                }
            }
            for l in lambdas {
                let acc: Vec<f64> = self.alignment.iter().filter(|a| a.lambda == l).map(|a| a.accuracy).collect();
                let (m, s) = mean_sd(&acc).expect("nonempty");
                let _ = writeln!(out, "  lambda {l:<6} {m:.3} ± {s:.3}");
            }
        }
        out
    }
}
