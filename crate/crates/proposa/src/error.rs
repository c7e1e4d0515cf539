//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Proposal parse failures are deliberately *not* an error variant: a
/// malformed proposal consumes an attempt and is recorded in the round,
/// while everything below aborts the operation that raised it.
#[derive(Debug, Error)]
pub enum Error {
    /// An artifact violated a structural invariant (e.g. empty body).
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),

    /// An argument was outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value or combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called out of sequence (e.g. ledger index gap).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An information barrier would have been crossed. Fatal to the run.
    #[error("barrier violation: {0}")]
    Barrier(String),

    /// A dataset could not be ingested.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A class is too small to stratify across the requested partitions.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Classification or scoring failed (e.g. rule references an unknown feature).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// An external proposer crashed, timed out, or was unreachable.
    #[error("proposer failure: {0}")]
    Proposer(String),

    /// The evaluator failed. An infrastructure fault, not evidence about
    /// the candidate; the run aborts with its ledger intact.
    #[error("evaluator failure: {0}")]
    Evaluator(String),

    /// Replay diverged from the recorded ledger.
    #[error("replay mismatch at {location}: {detail}")]
    ReplayMismatch { location: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
