use thiserror::Error;

use crate::hwprofile::MeasurementKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidModel(String),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),
    #[error("unknown model preset `{0}` (expected OPT-6.7B, OPT-13B or OPT-30B)")]
    UnknownPreset(String),
    #[error("split point l={l} outside [0, {seq_len}]")]
    SplitOutOfRange { l: u64, seq_len: u64 },

    #[error("need at least 2 {kind} measurements, found {found}")]
    InsufficientMeasurements { kind: MeasurementKind, found: usize },
    #[error("degenerate {kind} fit: all measurement sizes are equal")]
    DegenerateFit { kind: MeasurementKind },
    #[error("{kind} fit produced a non-positive rate (slope {slope:e})")]
    NegativeRate { kind: MeasurementKind, slope: f64 },
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("plan does not match workload: {0}")]
    InconsistentPlan(String),
    #[error("peak GPU memory {peak:.0} B exceeds budget {budget:.0} B")]
    MemoryBudgetExceeded { peak: f64, budget: f64 },
    #[error("task graph: {0}")]
    InvalidGraph(String),
    #[error("task graph contains a cycle")]
    CycleDetected,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("attention over an empty KV cache")]
    EmptyCache,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
