use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Canonical behavior vector: minutes watched, quiz attempts, forum reads,
/// forum posts, active days, rewatch rate.
pub const BEHAVIOR_FEATURES: usize = 6;
pub const BEHAVIOR_NAMES: [&str; BEHAVIOR_FEATURES] =
    ["minutes_watched", "quiz_attempts", "forum_reads", "forum_posts", "active_days", "rewatch_rate"];
/// Behavior is aggregated over a fixed window from course start.
pub const MAX_ACTIVE_DAYS: u64 = 28;

pub const VOCAB_SIZE: u32 = 5000;
/// Ids `[0, 100)` are positive and `[100, 200)` negative sentiment tokens,
/// shared by every platform.
pub const SENTIMENT_TOKENS: u32 = 200;
pub const TOPIC_TOKENS_PER_CLUSTER: u32 = 10;
/// Width of each platform's style-token window.
pub const STYLE_WINDOW: u32 = 1000;

/// A subject-area cluster: its own latent-satisfaction distribution and a
/// small set of topic tokens shared across platforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicCluster {
    pub beta_a: f64,
    pub beta_b: f64,
}

pub const TOPIC_CLUSTERS: [TopicCluster; 4] = [
    TopicCluster { beta_a: 3.0, beta_b: 4.0 },
    TopicCluster { beta_a: 4.0, beta_b: 3.5 },
    TopicCluster { beta_a: 5.0, beta_b: 3.0 },
    TopicCluster { beta_a: 6.0, beta_b: 2.5 },
];

pub(crate) const STYLE_START: u32 = SENTIMENT_TOKENS + TOPIC_TOKENS_PER_CLUSTER * TOPIC_CLUSTERS.len() as u32;

/// Affine map from latent satisfaction `s ∈ [0,1]` to a rating before noise
/// and clipping: `alpha·4·s + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub alpha: f64,
    pub beta: f64,
}

impl RatingScale {
    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        self.alpha * 4.0 * s + self.beta
    }
}

/// Generative description of one platform's shift profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub platform_id: usize,
    pub name: String,
    pub rating_scale: RatingScale,
    pub rating_noise_sd: f64,
    pub mean_review_tokens: f64,
    pub missing_behavior_rate: f64,
    /// Selects the platform's style-token window.
    pub vocab_skew_seed: u64,
    /// Which canonical features the platform's logging schema produces.
    pub logged_feature_mask: [bool; BEHAVIOR_FEATURES],
    /// Mixture weights over [`TOPIC_CLUSTERS`].
    pub course_mix: Vec<f64>,
    /// Per-feature logging granularity: the platform records each canonical
    /// feature multiplied by this factor. Active days and rewatch rate stay
    /// capped at their natural bounds.
    #[serde(default = "unit_scale")]
    pub behavior_scale: [f64; BEHAVIOR_FEATURES],
}

fn unit_scale() -> [f64; BEHAVIOR_FEATURES] {
    [1.0; BEHAVIOR_FEATURES]
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Error::Config {
            field: format!("platform[{}].{field}", self.platform_id),
            msg,
        };
        if !(0.0..=1.0).contains(&self.missing_behavior_rate) {
            return Err(bad("missing_behavior_rate", format!("{} not in [0,1]", self.missing_behavior_rate)));
        }
        if !(self.rating_scale.alpha > 0.0) || !self.rating_scale.alpha.is_finite() {
            return Err(bad("rating_scale.alpha", format!("{} must be > 0", self.rating_scale.alpha)));
        }
        if !self.rating_scale.beta.is_finite() {
            return Err(bad("rating_scale.beta", "must be finite".into()));
        }
        if !(self.rating_noise_sd >= 0.0) || !self.rating_noise_sd.is_finite() {
            return Err(bad("rating_noise_sd", format!("{} must be >= 0", self.rating_noise_sd)));
        }
        if !(self.mean_review_tokens > 0.0) || !self.mean_review_tokens.is_finite() {
            return Err(bad("mean_review_tokens", format!("{} must be > 0", self.mean_review_tokens)));
        }
        if self.logged_feature_mask.iter().filter(|&&b| b).count() < 3 {
            return Err(bad("logged_feature_mask", "at least 3 features must be logged".into()));
        }
        if self.behavior_scale.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(bad("behavior_scale", "factors must be finite and > 0".into()));
        }
        if self.course_mix.len() != TOPIC_CLUSTERS.len()
            || self.course_mix.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.course_mix.iter().sum::<f64>() <= 0.0
        {
            return Err(bad(
                "course_mix",
                format!("need {} non-negative weights with positive sum", TOPIC_CLUSTERS.len()),
            ));
        }
        Ok(())
    }

    /// First token id of this platform's style window.
    pub fn style_offset(&self) -> u32 {
        let span = (VOCAB_SIZE - STYLE_START - STYLE_WINDOW + 1) as u64;
        STYLE_START + ((self.vocab_skew_seed * STYLE_WINDOW as u64) % span) as u32
    }

    /// Three platforms whose rating, review-length and missingness
    /// statistics follow the cross-platform diagnostics used throughout the
    /// benchmark: A and B are sources, C is the target.
    ///
    /// A hosts easier courses and rates them strictly; B hosts harder
    /// courses, rates them generously and logs behavior on the same reduced
    /// scale as C; C rates most generously of all.
    pub fn benchmark() -> Vec<PlatformSpec> {
        let reduced = [0.6, 1.0, 0.5, 0.5, 1.0, 1.0];
        vec![
            PlatformSpec {
                platform_id: 0,
                name: "A".into(),
                rating_scale: RatingScale {
                    alpha: 1.1592,
                    beta: 1.4642,
                },
                rating_noise_sd: 0.40,
                mean_review_tokens: 28.0,
                missing_behavior_rate: 0.05,
                vocab_skew_seed: 0,
                logged_feature_mask: [true; BEHAVIOR_FEATURES],
                course_mix: vec![0.05, 0.10, 0.25, 0.60],
                behavior_scale: unit_scale(),
            },
            PlatformSpec {
                platform_id: 1,
                name: "B".into(),
                rating_scale: RatingScale {
                    alpha: 1.2770,
                    beta: 1.7694,
                },
                rating_noise_sd: 0.45,
                mean_review_tokens: 35.0,
                missing_behavior_rate: 0.12,
                vocab_skew_seed: 1,
                logged_feature_mask: [true; BEHAVIOR_FEATURES],
                course_mix: vec![0.60, 0.25, 0.10, 0.05],
                behavior_scale: reduced,
            },
            PlatformSpec {
                platform_id: 2,
                name: "C".into(),
                rating_scale: RatingScale {
                    alpha: 1.4692,
                    beta: 2.0689,
                },
                rating_noise_sd: 0.30,
                mean_review_tokens: 18.0,
                missing_behavior_rate: 0.40,
                vocab_skew_seed: 2,
                logged_feature_mask: [true; BEHAVIOR_FEATURES],
                course_mix: vec![0.225, 0.275, 0.30, 0.20],
                behavior_scale: reduced,
            },
        ]
    }
}

pub(crate) fn validate_specs(specs: &[PlatformSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Empty("platform specs"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.platform_id != i {
            return Err(Error::Config {
                field: format!("platform[{i}].platform_id"),
                msg: format!("expected {i}, found {}", s.platform_id),
            });
        }
        s.validate()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_specs_validate() {
        validate_specs(&PlatformSpec::benchmark()).unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut s = PlatformSpec::benchmark().remove(0);
        s.missing_behavior_rate = 1.5;
        assert!(s.validate().unwrap_err().to_string().contains("missing_behavior_rate"));
        let mut s = PlatformSpec::benchmark().remove(0);
        s.logged_feature_mask = [true, true, false, false, false, false];
        assert!(s.validate().unwrap_err().to_string().contains("logged_feature_mask"));
        let mut s = PlatformSpec::benchmark().remove(0);
        s.rating_scale.alpha = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn style_windows_stay_in_vocabulary() {
        for seed in 0..50 {
            let spec = PlatformSpec {
                vocab_skew_seed: seed,
                ..PlatformSpec::benchmark().remove(0)
            };
            let off = spec.style_offset();
            assert!(off >= STYLE_START && off + STYLE_WINDOW <= VOCAB_SIZE);
        }
    }
}
