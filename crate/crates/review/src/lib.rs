//! Human review of synthesized labels: stratified sampling of review sets, an append-only
//! verdict log, agreement statistics, and the HTTP API annotators talk to.

#![forbid(unsafe_code)]

mod api;
mod sampling;
mod store;

pub use api::{router, serve, ApiError, ACCESS_TOKEN_HEADER};
pub use sampling::{dataset_digest, explicit_set, stratified_sample, ReviewSet};
pub use store::{AgreementStats, HumanVerdict, NextSample, ReviewStore, SampleView, VerdictSubmission};

use trajaudit::Domain;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("domain {domain} has {available} anomalous samples, {required} required")]
    InsufficientSamples {
        domain: Domain,
        available: usize,
        required: usize,
    },
    #[error("unknown review set `{0}`")]
    UnknownSet(String),
    #[error("sample `{sample_id}` is not in review set `{set_id}`")]
    UnknownSample { set_id: String, sample_id: String },
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("annotator `{annotator_id}` already reviewed `{sample_id}`")]
    DuplicateVerdict {
        sample_id: String,
        annotator_id: String,
    },
    #[error("`{0}` has an anomalous ground truth, so localization_agrees is required")]
    MissingLocalization(String),
    #[error("review set `{0}` has no verdicts yet")]
    EmptySet(String),
    #[error("review set `{set_id}` was drawn from dataset {expected}, but the loaded dataset is {found}")]
    DatasetMismatch {
        set_id: String,
        expected: String,
        found: String,
    },
    #[error("verdict log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("verdict log: {0}")]
    Io(#[from] std::io::Error),
}

impl ReviewError {
    /// Stable machine-readable code, used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::InsufficientSamples { .. } => "InsufficientSamples",
            ReviewError::UnknownSet(_) => "UnknownSet",
            ReviewError::UnknownSample { .. } => "UnknownSample",
            ReviewError::UnknownAnnotator(_) => "UnknownAnnotator",
            ReviewError::DuplicateVerdict { .. } => "DuplicateVerdict",
            ReviewError::MissingLocalization(_) => "MissingLocalization",
            ReviewError::EmptySet(_) => "EmptySet",
            ReviewError::DatasetMismatch { .. } => "DatasetMismatch",
            ReviewError::CorruptLog { .. } => "CorruptLog",
            ReviewError::Io(_) => "Io",
        }
    }
}
