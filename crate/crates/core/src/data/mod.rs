//! Synthetic multi-platform enrollment corpus.
//!
//! Each platform draws a latent satisfaction per enrollment and renders it
//! through review tokens, six canonical behavior aggregates and a star
//! rating. Platforms differ in vocabulary, review length, behavior
//! availability, course mix and the affine map from satisfaction to rating.

mod diagnostics;
mod format;
mod generate;
mod impute;
mod spec;
mod split;

pub use diagnostics::{shift_diagnostics, ShiftRow, ShiftTable};
pub use format::{parse_corpus, write_corpus};
pub use generate::{generate_corpus, Corpus, Instance, InstanceId};
pub use impute::{impute_missing, ImputationStats};
pub use spec::{
    PlatformSpec, RatingScale, TopicCluster, BEHAVIOR_FEATURES, BEHAVIOR_NAMES, MAX_ACTIVE_DAYS, SENTIMENT_TOKENS,
    STYLE_WINDOW, TOPIC_CLUSTERS, VOCAB_SIZE,
};
pub use split::{time_split, PlatformSplit, Split};
