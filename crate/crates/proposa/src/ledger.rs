//! Round records and the persistent run ledger.
//!
//! The ledger is the full audit of a run: every attempt, decision,
//! temperature, and RNG draw, in order. Replaying the recorded config and
//! seed against the same task and proposer reproduces it byte for byte.
//!
//! Persisted as a single JSON document (UTF-8, keys in declaration order,
//! extension `.ledger.json`). `SCHEMA_VERSION` gates readers: unknown
//! versions are rejected, never guessed at.

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, MetricValue, VisibilityTier};

pub const SCHEMA_VERSION: u32 = 1;

/// How a round ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundDecision {
    /// An attempt passed the active acceptance rule; the incumbent changed.
    Accepted,
    /// A candidate was selected but failed acceptance. The loop driver
    /// folds this case into `Skipped`; the variant exists for ledgers
    /// written by other producers.
    Rejected,
    /// No attempt passed acceptance; counts toward early stopping.
    Skipped,
}

/// One proposal attempt within a round.
///
/// `artifact` is absent when the proposal failed to parse (or the proposer
/// failed outright); the attempt still counts against the round's budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub artifact: Option<Artifact>,
    pub score: Option<MetricValue>,
    pub parse_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AttemptRecord {
    pub fn evaluated(artifact: Artifact, score: MetricValue) -> Self {
        Self { artifact: Some(artifact), score: Some(score), parse_ok: true, error: None }
    }

    pub fn failed(error: impl Into<String>) -> Self {
        Self { artifact: None, score: None, parse_ok: false, error: Some(error.into()) }
    }
}

/// Full audit of one optimization round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    pub directive: Option<String>,
    pub attempts: Vec<AttemptRecord>,
    /// Present exactly when the run uses simulated annealing.
    pub temperature: Option<f64>,
    /// Uniform draws consumed this round, in consumption order.
    pub rng_draws: Vec<f64>,
    pub decision: RoundDecision,
    pub accepted_artifact_hash: Option<u64>,
}

/// The configuration a run was started with, snapshotted into its ledger.
/// Carries everything replay needs to re-execute the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub strategy: String,
    pub t0: Option<f64>,
    pub gamma: Option<f64>,
    pub attempt_limit: u32,
    pub skip_limit: u32,
    pub round_budget: u32,
    pub investigators: u32,
    pub directives: Option<Vec<String>>,
    pub rng_seed: u64,
    pub task_id: String,
    pub proposer_id: String,
}

/// Ordered journal of a whole run: config snapshot, every round, and the
/// single test-tier report produced at finalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub schema_version: u32,
    pub config: ConfigSnapshot,
    rounds: Vec<RoundRecord>,
    final_report: Option<EvaluationReport>,
}

impl RunLedger {
    pub fn new(config: ConfigSnapshot) -> Self {
        Self { schema_version: SCHEMA_VERSION, config, rounds: Vec::new(), final_report: None }
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn final_report(&self) -> Option<&EvaluationReport> {
        self.final_report.as_ref()
    }

    pub fn is_finalized(&self) -> bool {
        self.final_report.is_some()
    }

    /// Appends the next round. The record's index must be exactly one past
    /// the last appended round, and a finalized ledger accepts nothing.
    pub fn append(&mut self, record: RoundRecord) -> Result<()> {
        if self.is_finalized() {
            return Err(Error::Barrier("ledger is finalized; no further rounds may be appended".into()));
        }
        let expected = self.rounds.len() as u32 + 1;
        if record.round_index != expected {
            return Err(Error::Protocol(format!(
                "round index {} out of order, expected {expected}",
                record.round_index
            )));
        }
        self.rounds.push(record);
        Ok(())
    }

    /// Seals the ledger with the one-shot test report. Appending a second
    /// report is a barrier violation, as is a non-test tier.
    pub fn seal(&mut self, report: EvaluationReport) -> Result<()> {
        if self.is_finalized() {
            return Err(Error::Barrier("ledger already holds a test report".into()));
        }
        if report.tier() != VisibilityTier::Test {
            return Err(Error::Barrier(format!(
                "final report must be test tier, got {:?}",
                report.tier()
            )));
        }
        self.final_report = Some(report);
        Ok(())
    }

    /// Serializes to the canonical on-disk form (pretty JSON, stable key
    /// order). Byte-identical output for equal ledgers.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a ledger, rejecting unknown schema versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let ledger: RunLedger = serde_json::from_str(text)?;
        if ledger.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported ledger schema_version {}, this reader supports {SCHEMA_VERSION}",
                ledger.schema_version
            )));
        }
        ledger.validate()?;
        Ok(ledger)
    }

    /// Structural checks applied on read: index sequence, attempt bounds,
    /// decision/skip consistency.
    pub fn validate(&self) -> Result<()> {
        for (i, round) in self.rounds.iter().enumerate() {
            if round.round_index != i as u32 + 1 {
                return Err(Error::Protocol(format!(
                    "rounds[{i}] has index {}, expected {}",
                    round.round_index,
                    i + 1
                )));
            }
            if round.attempts.is_empty() {
                return Err(Error::Protocol(format!("rounds[{i}] has no attempts")));
            }
            match round.decision {
                RoundDecision::Accepted => {
                    if round.accepted_artifact_hash.is_none() {
                        return Err(Error::Protocol(format!(
                            "rounds[{i}] accepted but records no artifact hash"
                        )));
                    }
                }
                RoundDecision::Rejected | RoundDecision::Skipped => {
                    if round.accepted_artifact_hash.is_some() {
                        return Err(Error::Protocol(format!(
                            "rounds[{i}] not accepted but records an artifact hash"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Acceptance-tier evaluation count: attempts that produced a score.
    pub fn evaluation_count(&self) -> usize {
        self.rounds
            .iter()
            .flat_map(|r| r.attempts.iter())
            .filter(|a| a.score.is_some())
            .count()
    }

    /// Total attempts across all rounds, including parse failures.
    pub fn attempt_count(&self) -> usize {
        self.rounds.iter().map(|r| r.attempts.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::FormatTag;

    fn snapshot() -> ConfigSnapshot {
        ConfigSnapshot {
            strategy: "greedy".into(),
            t0: None,
            gamma: None,
            attempt_limit: 3,
            skip_limit: 2,
            round_budget: 5,
            investigators: 1,
            directives: None,
            rng_seed: 42,
            task_id: "test".into(),
            proposer_id: "scripted".into(),
        }
    }

    fn round(index: u32) -> RoundRecord {
        let artifact = Artifact::new(FormatTag::OpaqueText, format!("body {index}")).unwrap();
        let hash = artifact.content_hash();
        RoundRecord {
            round_index: index,
            directive: None,
            attempts: vec![AttemptRecord::evaluated(
                artifact,
                MetricValue::new("accuracy", 0.5).unwrap(),
            )],
            temperature: None,
            rng_draws: vec![],
            decision: RoundDecision::Accepted,
            accepted_artifact_hash: Some(hash),
        }
    }

    #[test]
    fn append_in_order() {
        let mut ledger = RunLedger::new(snapshot());
        ledger.append(round(1)).unwrap();
        assert_eq!(ledger.rounds().len(), 1);
    }

    #[test]
    fn append_index_gap_is_protocol_error() {
        let mut ledger = RunLedger::new(snapshot());
        ledger.append(round(1)).unwrap();
        ledger.append(round(2)).unwrap();
        assert!(matches!(ledger.append(round(4)), Err(Error::Protocol(_))));
    }

    #[test]
    fn append_after_seal_is_barrier_violation() {
        let mut ledger = RunLedger::new(snapshot());
        ledger.append(round(1)).unwrap();
        let report = EvaluationReport::new(
            VisibilityTier::Test,
            vec![MetricValue::new("accuracy", 0.9).unwrap()],
            "",
            7,
        );
        ledger.seal(report).unwrap();
        assert!(matches!(ledger.append(round(2)), Err(Error::Barrier(_))));
    }

    #[test]
    fn double_seal_is_barrier_violation() {
        let mut ledger = RunLedger::new(snapshot());
        let report = EvaluationReport::new(VisibilityTier::Test, vec![], "", 7);
        ledger.seal(report.clone()).unwrap();
        assert!(matches!(ledger.seal(report), Err(Error::Barrier(_))));
    }

    #[test]
    fn seal_rejects_non_test_tier() {
        let mut ledger = RunLedger::new(snapshot());
        let report = EvaluationReport::new(VisibilityTier::Validation, vec![], "", 7);
        assert!(matches!(ledger.seal(report), Err(Error::Barrier(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut ledger = RunLedger::new(snapshot());
        ledger.append(round(1)).unwrap();
        let json = ledger.to_json().unwrap();
        let back = RunLedger::from_json(&json).unwrap();
        assert_eq!(back, ledger);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let mut ledger = RunLedger::new(snapshot());
        ledger.schema_version = 99;
        let json = ledger.to_json().unwrap();
        assert!(matches!(RunLedger::from_json(&json), Err(Error::Config(_))));
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;

        fn attempt_strategy() -> impl Strategy<Value = AttemptRecord> {
            (any::<bool>(), "[a-z]{1,12}", 0.0..1.0f64).prop_map(|(ok, body, score)| {
                if ok {
                    AttemptRecord::evaluated(
                        Artifact::new(FormatTag::OpaqueText, body).unwrap(),
                        MetricValue::new("accuracy", score).unwrap(),
                    )
                } else {
                    AttemptRecord::failed(format!("parse failure: {body}"))
                }
            })
        }

        fn ledger_strategy() -> impl Strategy<Value = RunLedger> {
            let rounds = proptest::collection::vec(
                (
                    proptest::collection::vec(attempt_strategy(), 1..4),
                    proptest::option::of(0.001..1.0f64),
                    proptest::collection::vec(0.0..1.0f64, 0..3),
                    proptest::option::of("[a-z ]{1,20}"),
                ),
                0..6,
            );
            let sealed = any::<bool>();
            (rounds, sealed).prop_map(|(rounds, sealed)| {
                let mut ledger = RunLedger::new(snapshot());
                for (i, (attempts, temperature, rng_draws, directive)) in
                    rounds.into_iter().enumerate()
                {
                    // Accept when the last attempt evaluated; keeps the
                    // decision consistent with the recorded hash.
                    let accepted_hash = attempts
                        .last()
                        .filter(|a| a.parse_ok)
                        .and_then(|a| a.artifact.as_ref())
                        .map(|a| a.content_hash());
                    let decision = if accepted_hash.is_some() {
                        RoundDecision::Accepted
                    } else {
                        RoundDecision::Skipped
                    };
                    ledger
                        .append(RoundRecord {
                            round_index: i as u32 + 1,
                            directive,
                            attempts,
                            temperature,
                            rng_draws,
                            decision,
                            accepted_artifact_hash: accepted_hash,
                        })
                        .unwrap();
                }
                if sealed {
                    ledger
                        .seal(EvaluationReport::new(
                            VisibilityTier::Test,
                            vec![MetricValue::new("accuracy", 0.5).unwrap()],
                            "diag",
                            9,
                        ))
                        .unwrap();
                }
                ledger
            })
        }

        proptest! {
            #[test]
            fn serialization_round_trips(ledger in ledger_strategy()) {
                let json = ledger.to_json().unwrap();
                let back = RunLedger::from_json(&json).unwrap();
                prop_assert_eq!(&back, &ledger);
                prop_assert_eq!(back.to_json().unwrap(), json);
            }
        }
    }
}
