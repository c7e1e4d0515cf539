//! Propose-evaluate-accept optimization loops with pluggable proposal
//! generators, strict information barriers, and bit-exact replay.
//!
//! The crate ships three acceptance strategies (greedy hill climbing,
//! simulated annealing with geometric cooling, parallel investigators with
//! best-of-K selection), a proposer abstraction covering scripted, random
//! perturbation, history-conditioned, and external-process generators, and
//! two fully verifiable task backends: a YAML first-match rule classifier
//! and a synthetic landscape lab.

pub mod acceptance;
pub mod artifact;
pub mod barrier;
pub mod cli;
pub mod error;
pub mod landscapes;
pub mod ledger;
pub mod metrics;
pub mod orchestrator;
pub mod process;
pub mod proposers;
pub mod rng;
pub mod ruleset;
pub mod task;

pub use artifact::{hash_artifact, Artifact, FormatTag};
pub use barrier::{check_barrier, BarrierCheck, Requestor};
pub use error::{Error, Result};
pub use ledger::{AttemptRecord, ConfigSnapshot, RoundDecision, RoundRecord, RunLedger};
pub use metrics::{EvaluationReport, MetricValue, VisibilityTier};
pub use orchestrator::{LoopConfig, LoopState, RunOutcome, Strategy};
pub use proposers::{ProposalContext, Proposer, ProposerSpec};
pub use task::Task;
