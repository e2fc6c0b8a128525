//! Metrics, baselines, evaluation protocols and reports.
mod bench;
mod metrics;
mod probe;
mod protocol;
mod report;
mod search;

pub use bench::{
    k_label, lambda_label, prepare, Audit, Benchmark, FitRecord, Hygiene, Prepared, TrainRecord,
    ABLATION_ROWS,
};
pub use metrics::{mae, mean_sd, relative_gain, rmse};
pub use probe::{discriminator_accuracy, probe_accuracy, PlatformAccuracy, ProbeConfig};
pub use protocol::{parse_transfer, ProtocolConfig, TargetStatsMode, Transfer, Variant};
pub use report::{AlignmentCell, Aggregate, Cell, EvalReport, Section, GAIN_ROW};
pub use search::{hyperparameter_search, sample_trials, SearchResult, SearchSpace, Trial, TrialPoint};
