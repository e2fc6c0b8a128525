use super::generate::Corpus;
use super::spec::BEHAVIOR_FEATURES;
use super::split::PlatformSplit;
use crate::{Error, Result};

/// Per-platform fill constants, fitted on training splits only.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationStats {
    pub platform_means: Vec<[f64; BEHAVIOR_FEATURES]>,
    pub global_means: [f64; BEHAVIOR_FEATURES],
    /// `(platform, feature)` pairs with no observed training value, filled
    /// from the global mean instead.
    pub fallbacks: Vec<(usize, usize)>,
}

impl ImputationStats {
    pub fn fit(corpus: &Corpus, splits: &[PlatformSplit]) -> Result<Self> {
        if splits.len() != corpus.num_platforms() {
            return Err(Error::shape("impute_missing", corpus.num_platforms(), splits.len()));
        }
        let mut sums = vec![[0.0; BEHAVIOR_FEATURES]; splits.len()];
        let mut counts = vec![[0usize; BEHAVIOR_FEATURES]; splits.len()];
        for s in splits {
            for inst in &corpus.instances[s.train.clone()] {
                for (f, v) in inst.behavior.iter().enumerate() {
                    if !v.is_nan() {
                        sums[s.platform][f] += v;
                        counts[s.platform][f] += 1;
                    }
                }
            }
        }
        let mut global_means = [0.0; BEHAVIOR_FEATURES];
        for f in 0..BEHAVIOR_FEATURES {
            let n: usize = counts.iter().map(|c| c[f]).sum();
            if n == 0 {
                return Err(Error::Degenerate(format!(
                    "behavior feature {f} is never observed in any training split"
                )));
            }
            global_means[f] = sums.iter().map(|s| s[f]).sum::<f64>() / n as f64;
        }
        let mut fallbacks = Vec::new();
        let platform_means = (0..splits.len())
            .map(|p| {
                let mut m = [0.0; BEHAVIOR_FEATURES];
                for f in 0..BEHAVIOR_FEATURES {
                    m[f] = if counts[p][f] > 0 {
                        sums[p][f] / counts[p][f] as f64
                    } else {
                        log::warn!("platform {p} never observes behavior feature {f}; using the global training mean");
                        fallbacks.push((p, f));
                        global_means[f]
                    };
                }
                m
            })
            .collect();
        Ok(Self {
            platform_means,
            global_means,
            fallbacks,
        })
    }

    pub fn fill(&self, platform: usize) -> Result<&[f64; BEHAVIOR_FEATURES]> {
        self.platform_means.get(platform).ok_or(Error::UnknownPlatform(platform))
    }

    /// Fills every missing entry; `m` becomes 0 exactly for instances that
    /// needed a fill.
    pub fn apply(&self, corpus: &Corpus) -> Result<Corpus> {
        let mut out = corpus.clone();
        for inst in &mut out.instances {
            let fill = self.fill(inst.platform)?;
            let mut imputed = false;
            for (v, c) in inst.behavior.iter_mut().zip(fill) {
                if v.is_nan() {
                    *v = *c;
                    imputed = true;
                }
            }
            inst.modality = u8::from(!imputed);
        }
        Ok(out)
    }
}

/// Fits fill constants on the training splits and applies them everywhere.
pub fn impute_missing(corpus: &Corpus, splits: &[PlatformSplit]) -> Result<(Corpus, ImputationStats)> {
    let stats = ImputationStats::fit(corpus, splits)?;
    let imputed = stats.apply(corpus)?;
    Ok((imputed, stats))
}
