//! The task contract: seed artifact, parsing function, and tiered
//! evaluation, plus the subprocess evaluator for external tasks.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, MetricValue, VisibilityTier};
use crate::process::{run_with_timeout, ProcessFailure};

/// A proposal that did not survive the task's parsing function. Not an
/// error: it consumes an attempt and is recorded in the round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub raw_output: String,
    pub error: String,
}

/// An optimizable task: owns the artifact format, the deterministic
/// parsing function that turns raw proposer output into artifacts, and
/// the evaluator behind each visibility tier.
pub trait Task: Send + Sync {
    /// Stable identifier recorded in ledgers.
    fn id(&self) -> &str;

    /// Name of the metric acceptance decisions compare on.
    fn primary_metric(&self) -> &str;

    /// The artifact a run starts from.
    fn seed_artifact(&self) -> Result<Artifact>;

    /// The parsing function: raw proposer output in, valid artifact out.
    fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure>;

    /// Evaluates an artifact on one tier. Failures here are
    /// infrastructure faults and abort the run.
    fn evaluate(&self, artifact: &Artifact, tier: VisibilityTier) -> Result<EvaluationReport>;
}

/// Checks the contract every evaluator must honor: the report carries the
/// requested tier and the evaluated artifact's hash.
pub fn validate_report(
    report: &EvaluationReport,
    artifact: &Artifact,
    requested: VisibilityTier,
) -> Result<()> {
    if report.tier() != requested {
        return Err(Error::Evaluator(format!(
            "evaluator returned tier {:?} for a {requested:?} request",
            report.tier()
        )));
    }
    if report.artifact_hash() != artifact.content_hash() {
        return Err(Error::Evaluator(format!(
            "evaluator report hash {:x} does not match artifact {:x}",
            report.artifact_hash(),
            artifact.content_hash()
        )));
    }
    Ok(())
}

pub const DEFAULT_EVALUATOR_TIMEOUT_SECS: u64 = 3600;

#[derive(Serialize)]
struct EvalRequest<'a> {
    artifact: &'a Artifact,
    tier: VisibilityTier,
    split_spec: &'a serde_json::Value,
}

#[derive(Deserialize)]
struct EvalResponse {
    metrics: Vec<MetricValue>,
    diagnostics: String,
}

/// A task whose evaluator is an external subprocess.
///
/// Wire protocol: one JSON object on stdin
/// `{"artifact": {...}, "tier": "...", "split_spec": ...}`, one JSON
/// object `{"metrics": [{"name", "value"}], "diagnostics": "..."}` on
/// stdout. A nonzero exit or a timeout is an evaluator failure.
pub struct SubprocessTask {
    id: String,
    command: Vec<String>,
    timeout: Duration,
    split_spec: serde_json::Value,
    seed: Artifact,
    primary_metric: String,
}

impl SubprocessTask {
    pub fn new(
        id: impl Into<String>,
        command: Vec<String>,
        timeout: Duration,
        split_spec: serde_json::Value,
        seed: Artifact,
        primary_metric: impl Into<String>,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("evaluator command is empty".into()));
        }
        Ok(Self {
            id: id.into(),
            command,
            timeout,
            split_spec,
            seed,
            primary_metric: primary_metric.into(),
        })
    }
}

impl Task for SubprocessTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn primary_metric(&self) -> &str {
        &self.primary_metric
    }

    fn seed_artifact(&self) -> Result<Artifact> {
        Ok(self.seed.clone())
    }

    fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(ParseFailure {
                raw_output: raw.to_string(),
                error: "proposal is empty".into(),
            });
        }
        Artifact::new(self.seed.format_tag(), trimmed).map_err(|e| ParseFailure {
            raw_output: raw.to_string(),
            error: e.to_string(),
        })
    }

    fn evaluate(&self, artifact: &Artifact, tier: VisibilityTier) -> Result<EvaluationReport> {
        let request = EvalRequest { artifact, tier, split_spec: &self.split_spec };
        let mut payload = serde_json::to_vec(&request)?;
        payload.push(b'\n');
        let output = run_with_timeout(&self.command, &payload, self.timeout).map_err(|f| {
            Error::Evaluator(format!("{}: {f}", self.command.join(" ")))
        })?;
        let response: EvalResponse = serde_json::from_str(output.stdout.trim()).map_err(|e| {
            Error::Evaluator(format!("unparseable evaluator response: {e}"))
        })?;
        for metric in &response.metrics {
            if !metric.value().is_finite() {
                return Err(Error::Evaluator(format!(
                    "evaluator returned non-finite metric {:?}",
                    metric.name()
                )));
            }
        }
        let report = EvaluationReport::new(
            tier,
            response.metrics,
            response.diagnostics,
            artifact.content_hash(),
        );
        validate_report(&report, artifact, tier)?;
        Ok(report)
    }
}

impl From<ProcessFailure> for Error {
    fn from(f: ProcessFailure) -> Self {
        Error::Evaluator(f.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::FormatTag;

    fn seed() -> Artifact {
        Artifact::new(FormatTag::OpaqueText, "seed body").unwrap()
    }

    fn sh_task(script: &str) -> SubprocessTask {
        SubprocessTask::new(
            "ext-test",
            vec!["sh".into(), "-c".into(), script.into()],
            Duration::from_secs(10),
            serde_json::Value::Null,
            seed(),
            "score",
        )
        .unwrap()
    }

    #[test]
    fn round_trips_the_wire_protocol() {
        // The double ignores the request and returns a fixed response.
        let task = sh_task(
            r#"cat > /dev/null; echo '{"metrics":[{"name":"score","value":0.75}],"diagnostics":"ok"}'"#,
        );
        let artifact = seed();
        let report = task.evaluate(&artifact, VisibilityTier::Validation).unwrap();
        assert_eq!(report.tier(), VisibilityTier::Validation);
        assert_eq!(report.metric("score").unwrap().value(), 0.75);
        assert_eq!(report.diagnostics(), "ok");
        assert_eq!(report.artifact_hash(), artifact.content_hash());
    }

    #[test]
    fn request_carries_artifact_tier_and_split_spec() {
        // The double echoes the request into diagnostics so we can inspect it.
        let task = SubprocessTask::new(
            "ext-test",
            vec![
                "sh".into(),
                "-c".into(),
                r#"req=$(cat); printf '{"metrics":[{"name":"score","value":1.0}],"diagnostics":%s}' "$(printf '%s' "$req" | sed 's/"/\\"/g; s/^/"/; s/$/"/')""#.into(),
            ],
            Duration::from_secs(10),
            serde_json::json!({"fold": 3}),
            seed(),
            "score",
        )
        .unwrap();
        let artifact = seed();
        let report = task.evaluate(&artifact, VisibilityTier::TrainDiagnostics).unwrap();
        let echoed: serde_json::Value = serde_json::from_str(report.diagnostics()).unwrap();
        assert_eq!(echoed["tier"], "train_diagnostics");
        assert_eq!(echoed["artifact"]["body"], "seed body");
        assert_eq!(echoed["split_spec"]["fold"], 3);
    }

    #[test]
    fn nonzero_exit_is_evaluator_failure() {
        let task = sh_task("cat > /dev/null; echo oops >&2; exit 1");
        let err = task.evaluate(&seed(), VisibilityTier::Validation).unwrap_err();
        match err {
            Error::Evaluator(msg) => assert!(msg.contains("oops"), "{msg}"),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn garbage_response_is_evaluator_failure() {
        let task = sh_task("cat > /dev/null; echo not-json");
        assert!(matches!(
            task.evaluate(&seed(), VisibilityTier::Validation),
            Err(Error::Evaluator(_))
        ));
    }

    #[test]
    fn parse_rejects_empty_output() {
        let task = sh_task("true");
        assert!(task.parse("  \n ").is_err());
        let ok = task.parse("a new artifact\n").unwrap();
        assert_eq!(ok.body(), "a new artifact");
    }
}
