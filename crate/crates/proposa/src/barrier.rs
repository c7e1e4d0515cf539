//! The information barrier: who may see which evaluation tier.
//!
//! Investigators (proposers) read training diagnostics only. The reviewer
//! (acceptance logic) reads validation scores, and may also see training
//! diagnostics since those sit below validation in sensitivity. Nobody
//! reads the test tier through this check; the single test evaluation
//! happens at finalization, outside any request path.

use serde::{Deserialize, Serialize};

use crate::metrics::VisibilityTier;

/// Who is asking for an evaluation report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requestor {
    Investigator,
    Reviewer,
}

/// Outcome of a barrier check. Violations are values: callers log them
/// and abort the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BarrierCheck {
    Allow,
    Violation(String),
}

impl BarrierCheck {
    pub fn is_allowed(&self) -> bool {
        matches!(self, BarrierCheck::Allow)
    }
}

/// Decides whether `requestor` may read reports of `tier` during a run.
pub fn check_barrier(requestor: Requestor, tier: VisibilityTier) -> BarrierCheck {
    match (requestor, tier) {
        (Requestor::Investigator, VisibilityTier::TrainDiagnostics) => BarrierCheck::Allow,
        (Requestor::Investigator, VisibilityTier::Validation) => BarrierCheck::Violation(
            "investigator may not read validation-tier reports".into(),
        ),
        (Requestor::Reviewer, VisibilityTier::TrainDiagnostics | VisibilityTier::Validation) => {
            BarrierCheck::Allow
        }
        (_, VisibilityTier::Test) => BarrierCheck::Violation(
            "test tier is evaluated once at finalization; mid-run access is forbidden".into(),
        ),
    }
}
