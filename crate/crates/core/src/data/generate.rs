use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Beta, Binomial, Distribution, LogNormal, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use super::spec::{
    validate_specs, PlatformSpec, BEHAVIOR_FEATURES, MAX_ACTIVE_DAYS, SENTIMENT_TOKENS, STYLE_START, STYLE_WINDOW,
    TOPIC_CLUSTERS, TOPIC_TOKENS_PER_CLUSTER,
};
use crate::fingerprint::{derive_seed, of_json, sha256_hex};
use crate::{Error, Result};

/// Share of review tokens that carry sentiment.
const SENTIMENT_SHARE: f64 = 0.30;
/// Share of review tokens naming the course topic.
const TOPIC_SHARE: f64 = 0.10;
const MIN_REVIEW_TOKENS: usize = 3;
/// Spread of the per-learner engagement factor shared by all behavior
/// counts; it makes behavior informative but not sufficient.
const ENGAGEMENT_SIGMA: f64 = 0.35;
/// Style tokens follow a Zipf law over the platform's window, so a few
/// house phrases recur across most of a platform's reviews.
const STYLE_ZIPF_EXPONENT: f64 = 1.1;
/// Share of style tokens that are platform idiom for praise or complaint.
const DIALECT_SHARE: f64 = 0.3;
/// Size of each (praise, complaint) idiom block at the end of the window.
const DIALECT_BLOCK: u32 = 50;

/// Stable identity of an instance across splits and files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub platform: usize,
    pub time_index: u64,
}

/// One enrollment. Missing behavior entries are NaN until imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub platform: usize,
    pub time_index: u64,
    pub tokens: Vec<u32>,
    pub behavior: [f64; BEHAVIOR_FEATURES],
    pub modality: u8,
    pub label: f64,
    /// Generator-internal ground truth; models never read it.
    pub latent_s: f64,
}

impl Instance {
    pub fn id(&self) -> InstanceId {
        InstanceId {
            platform: self.platform,
            time_index: self.time_index,
        }
    }

    pub fn has_missing_behavior(&self) -> bool {
        self.behavior.iter().any(|v| v.is_nan())
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub specs: Vec<PlatformSpec>,
    pub seed: u64,
}

impl Corpus {
    pub fn num_platforms(&self) -> usize {
        self.specs.len()
    }

    pub fn spec_fingerprint(&self) -> String {
        of_json(&self.specs)
    }

    /// SHA-256 of the serialized corpus file.
    pub fn fingerprint(&self) -> String {
        sha256_hex(super::format::write_corpus(self).as_bytes())
    }

    /// Index range of each platform's instances.
    pub fn platform_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.specs.len());
        let mut start = 0;
        for p in 0..self.specs.len() {
            let len = self.instances[start..].iter().take_while(|i| i.platform == p).count();
            out.push(start..start + len);
            start += len;
        }
        out
    }

    /// Checks the ordering and value invariants every corpus must satisfy.
    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.specs)?;
        let mut prev: Option<InstanceId> = None;
        for (i, inst) in self.instances.iter().enumerate() {
            let bad = |msg: String| Error::InvalidArgument(format!("instance {i}: {msg}"));
            if inst.platform >= self.specs.len() {
                return Err(Error::UnknownPlatform(inst.platform));
            }
            if let Some(p) = prev {
                if inst.id() <= p {
                    return Err(bad("instances not strictly sorted by (platform, time_index)".into()));
                }
            }
            prev = Some(inst.id());
            if inst.modality > 1 {
                return Err(bad(format!("modality flag {} not in {{0,1}}", inst.modality)));
            }
            if !(1.0..=5.0).contains(&inst.label) {
                return Err(bad(format!("label {} outside [1,5]", inst.label)));
            }
            if !(0.0..=1.0).contains(&inst.latent_s) {
                return Err(bad(format!("latent {} outside [0,1]", inst.latent_s)));
            }
            for (f, v) in inst.behavior.iter().enumerate() {
                if v.is_nan() {
                    continue;
                }
                if !v.is_finite() || *v < 0.0 {
                    return Err(bad(format!("behavior[{f}] = {v}")));
                }
            }
            let (d, rho) = (inst.behavior[4], inst.behavior[5]);
            if d > MAX_ACTIVE_DAYS as f64 {
                return Err(bad(format!("active days {d} > {MAX_ACTIVE_DAYS}")));
            }
            if rho > 1.0 {
                return Err(bad(format!("rewatch rate {rho} > 1")));
            }
        }
        Ok(())
    }
}

/// Generates `n_per_platform` enrollments for every platform. Each platform
/// draws from its own derived random stream, so the result does not depend
/// on generation order.
pub fn generate_corpus(specs: &[PlatformSpec], n_per_platform: usize, seed: u64) -> Result<Corpus> {
    validate_specs(specs)?;
    if n_per_platform < 10 {
        return Err(Error::InvalidArgument(format!(
            "n_per_platform must be >= 10, got {n_per_platform}"
        )));
    }
    let mut instances = Vec::with_capacity(specs.len() * n_per_platform);
    for spec in specs {
        instances.extend(generate_platform(spec, n_per_platform, seed));
    }
    Ok(Corpus {
        instances,
        specs: specs.to_vec(),
        seed,
    })
}

fn generate_platform(spec: &PlatformSpec, n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("platform/{}", spec.platform_id)));
    let clusters = WeightedIndex::new(&spec.course_mix).expect("validated course mix");
    let latents: Vec<Beta<f64>> = TOPIC_CLUSTERS
        .iter()
        .map(|c| Beta::new(c.beta_a, c.beta_b).expect("positive shape parameters"))
        .collect();
    let length = Poisson::new(spec.mean_review_tokens).expect("validated review length");
    let engagement = LogNormal::new(0.0, ENGAGEMENT_SIGMA).expect("valid lognormal");
    let minutes_noise = LogNormal::new(0.0, 0.25).expect("valid lognormal");
    let unit_normal: Normal<f64> = Normal::new(0.0, 1.0).expect("valid normal");
    let style_offset = spec.style_offset();
    let style_rank = Zipf::new(STYLE_WINDOW as f64, STYLE_ZIPF_EXPONENT).expect("valid zipf");

    (0..n)
        .map(|t| {
            let cluster = clusters.sample(&mut rng);
            let s = latents[cluster].sample(&mut rng);

            let len = (length.sample(&mut rng) as usize).max(MIN_REVIEW_TOKENS);
            let tokens = (0..len)
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < SENTIMENT_SHARE {
                        let half = SENTIMENT_TOKENS / 2;
                        let base = if rng.random::<f64>() < s { 0 } else { half };
                        base + rng.random_range(0..half)
                    } else if u < SENTIMENT_SHARE + TOPIC_SHARE {
                        SENTIMENT_TOKENS
                            + cluster as u32 * TOPIC_TOKENS_PER_CLUSTER
                            + rng.random_range(0..TOPIC_TOKENS_PER_CLUSTER)
                    } else if rng.random::<f64>() < DIALECT_SHARE {
                        let block = if rng.random::<f64>() < s { 2 } else { 1 };
                        style_offset + STYLE_WINDOW - block * DIALECT_BLOCK + rng.random_range(0..DIALECT_BLOCK)
                    } else {
                        debug_assert!(style_offset >= STYLE_START);
                        style_offset + style_rank.sample(&mut rng) as u32 - 1
                    }
                })
                .collect();

            let e = engagement.sample(&mut rng);
            let minutes = e * (40.0 + 360.0 * s) * minutes_noise.sample(&mut rng);
            let quiz = poisson(&mut rng, e * (1.0 + 7.0 * s));
            let reads = poisson(&mut rng, e * (2.0 + 18.0 * s));
            let posts = poisson(&mut rng, e * (0.2 + 3.0 * s));
            let p_active = (e * (0.15 + 0.55 * s)).clamp(0.0, 1.0);
            let days = Binomial::new(MAX_ACTIVE_DAYS, p_active).expect("probability clamped").sample(&mut rng) as f64;
            let rewatch = (0.05 + 0.35 * s + 0.1 * unit_normal.sample(&mut rng)).clamp(0.0, 1.0);
            let mut behavior = [minutes, quiz, reads, posts, days, rewatch];
            for ((v, &logged), &scale) in behavior.iter_mut().zip(&spec.logged_feature_mask).zip(&spec.behavior_scale) {
                *v = if logged { *v * scale } else { f64::NAN };
            }
            // Comparisons leave NaN (unlogged) entries alone.
            if behavior[4] > MAX_ACTIVE_DAYS as f64 {
                behavior[4] = MAX_ACTIVE_DAYS as f64;
            }
            if behavior[5] > 1.0 {
                behavior[5] = 1.0;
            }

            let missing = rng.random::<f64>() < spec.missing_behavior_rate;
            if missing {
                behavior = [f64::NAN; BEHAVIOR_FEATURES];
            }

            let noise = if spec.rating_noise_sd > 0.0 {
                spec.rating_noise_sd * unit_normal.sample(&mut rng)
            } else {
                0.0
            };
            let label = (spec.rating_scale.apply(s) + noise).clamp(1.0, 5.0);

            Instance {
                platform: spec.platform_id,
                time_index: t as u64,
                tokens,
                behavior,
                modality: u8::from(!missing),
                label,
                latent_s: s,
            }
        })
        .collect()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng)
}
