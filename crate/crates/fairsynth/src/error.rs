//! Error type shared across the pipeline.

use thiserror::Error;

/// Errors produced by cohort handling, training, and evaluation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown code '{0}' not present in the vocabulary")]
    UnknownCode(String),

    #[error("record '{id}' has {n_visits} visits, exceeding the horizon of {max} visit rows")]
    HorizonExceeded { id: String, n_visits: usize, max: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("malformed cohort line {line}: {source}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("unknown attribute '{0}' in filter predicate")]
    UnknownAttribute(String),

    #[error("unknown fairness objective '{name}'; registered objectives: {known}")]
    UnknownObjective { name: String, known: String },

    #[error("unknown group label '{0}'")]
    UnknownGroup(String),

    #[error("no group meets the minimum of {min_positives} positive labels")]
    NoEligibleGroup { min_positives: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step}; last finite trace row retained")]
    Diverged { step: usize },

    #[error("non-finite activations in batch {batch}")]
    NonFinite { batch: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
