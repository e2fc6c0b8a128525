use std::fmt;

use super::generate::Corpus;
use crate::{Error, Result};

/// Per-platform shift statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub platform: usize,
    pub name: String,
    pub n: usize,
    pub mean_rating: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd_rating: f64,
    pub mean_review_tokens: f64,
    /// Share of instances with `m = 0`.
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTable {
    pub rows: Vec<ShiftRow>,
}

pub fn shift_diagnostics(corpus: &Corpus) -> Result<ShiftTable> {
    if corpus.instances.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let rows = corpus
        .platform_ranges()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(p, r)| {
            let insts = &corpus.instances[r];
            let n = insts.len() as f64;
            let mean = insts.iter().map(|i| i.label).sum::<f64>() / n;
            let ss = insts.iter().map(|i| (i.label - mean).powi(2)).sum::<f64>();
            let sd = if insts.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            ShiftRow {
                platform: p,
                name: corpus.specs[p].name.clone(),
                n: insts.len(),
                mean_rating: mean,
                sd_rating: sd,
                mean_review_tokens: insts.iter().map(|i| i.tokens.len() as f64).sum::<f64>() / n,
                missing_rate: insts.iter().filter(|i| i.modality == 0).count() as f64 / n,
            }
        })
        .collect();
    Ok(ShiftTable { rows })
}

impl fmt::Display for ShiftTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>7} {:>14} {:>12} {:>9}", "platform", "n", "rating", "avg_tokens", "missing")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>7} {:>7.2} ± {:<4.2} {:>12.1} {:>8.1}%",
                r.name,
                r.n,
                r.mean_rating,
                r.sd_rating,
                r.mean_review_tokens,
                100.0 * r.missing_rate
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, PlatformSpec};

    #[test]
    fn degenerate_ratings() {
        let mut c = generate_corpus(&PlatformSpec::benchmark(), 30, 0).unwrap();
        for i in &mut c.instances {
            i.label = 5.0;
        }
        let t = shift_diagnostics(&c).unwrap();
        for r in &t.rows {
            assert_eq!(r.mean_rating, 5.0);
            assert_eq!(r.sd_rating, 0.0);
        }
        assert!(t.to_string().contains("5.00 ± 0.00"));
    }

    #[test]
    fn missing_rate_counts_unobserved_modality() {
        let c = generate_corpus(&PlatformSpec::benchmark(), 400, 3).unwrap();
        let t = shift_diagnostics(&c).unwrap();
        for (r, range) in t.rows.iter().zip(c.platform_ranges()) {
            let zeros = c.instances[range].iter().filter(|i| i.modality == 0).count();
            assert_eq!(r.missing_rate, zeros as f64 / 400.0);
        }
    }

    #[test]
    fn empty_corpus() {
        let mut c = generate_corpus(&PlatformSpec::benchmark(), 10, 0).unwrap();
        c.instances.clear();
        assert!(shift_diagnostics(&c).is_err());
    }
}
