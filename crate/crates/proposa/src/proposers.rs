//! Pluggable proposal generators: scripted (testing), random perturbation
//! (classical baseline), history-conditioned, and external agent processes.
//!
//! A proposer emits raw text; the task's parsing function decides whether
//! that text is a valid artifact. Scripted and random proposers are pure
//! functions of (spec, context, substream), which is what makes ledger
//! replay possible.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, FormatTag};
use crate::barrier::{check_barrier, BarrierCheck, Requestor};
use crate::error::{Error, Result};
use crate::ledger::RunLedger;
use crate::metrics::{EvaluationReport, MetricValue};
use crate::process::run_with_timeout;
use crate::rng::standard_normal;
use crate::task::{ParseFailure, Task};

/// Environment variable overriding the per-call external proposer timeout.
pub const TIMEOUT_ENV_VAR: &str = "PROPOSA_TIMEOUT_SECS";

pub const DEFAULT_PROPOSER_TIMEOUT_SECS: u64 = 600;
pub const DEFAULT_HISTORY_DEPTH: usize = 10;

/// One (artifact summary, score) pair shown to history-conditioned
/// proposers. Numeric configs carry their full body; bulkier formats are
/// summarized by hash to bound context size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub summary: String,
    pub score: MetricValue,
}

/// Everything a proposer is allowed to see.
///
/// Field order is the wire schema: external proposers receive exactly this
/// struct as one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalContext {
    pub format_tag: FormatTag,
    pub incumbent_body: String,
    pub incumbent_score: MetricValue,
    pub diagnostics: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<HistoryEntry>>,
    pub attempt_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_attempt_feedback: Option<String>,
}

impl ProposalContext {
    /// Assembles a context, enforcing the information barrier: the
    /// diagnostics report must be investigator-visible (train tier), and
    /// history must arrive sorted descending by score.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        incumbent: &Artifact,
        incumbent_score: &MetricValue,
        diagnostics_report: &EvaluationReport,
        directive: Option<String>,
        history: Option<Vec<HistoryEntry>>,
        attempt_index: u32,
        prior_attempt_feedback: Option<String>,
    ) -> Result<Self> {
        if let BarrierCheck::Violation(why) =
            check_barrier(Requestor::Investigator, diagnostics_report.tier())
        {
            return Err(Error::Barrier(why));
        }
        if let Some(entries) = &history {
            let sorted = entries.windows(2).all(|w| w[0].score.value() >= w[1].score.value());
            if !sorted {
                return Err(Error::Config("history must be sorted descending by score".into()));
            }
        }
        if attempt_index < 1 {
            return Err(Error::Domain("attempt index is 1-based".into()));
        }
        Ok(Self {
            format_tag: incumbent.format_tag(),
            incumbent_body: incumbent.body().to_string(),
            incumbent_score: incumbent_score.clone(),
            diagnostics: diagnostics_report.diagnostics().to_string(),
            directive,
            history,
            attempt_index,
            prior_attempt_feedback,
        })
    }
}

/// A proposal generator. Returns raw text; transport problems are
/// proposer failures, which consume the attempt.
pub trait Proposer: Send {
    fn id(&self) -> &str;

    fn propose(&mut self, context: &ProposalContext, rng: &mut ChaCha8Rng) -> Result<String>;
}

/// Outcome of one generate-then-parse step.
#[derive(Debug, Clone)]
pub enum ProposalOutcome {
    Parsed(Artifact),
    /// The raw output and the parser's complaint. Consumes an attempt.
    ParseFailed(ParseFailure),
}

/// Runs the proposer and pushes its raw output through the task's parsing
/// function. `Err` means the proposer itself failed (transport, crash);
/// malformed output is a `ParseFailed` value, not an error.
pub fn propose(
    proposer: &mut dyn Proposer,
    task: &dyn Task,
    context: &ProposalContext,
    rng: &mut ChaCha8Rng,
) -> Result<ProposalOutcome> {
    let raw = proposer.propose(context, rng)?;
    match task.parse(&raw) {
        Ok(artifact) => Ok(ProposalOutcome::Parsed(artifact)),
        Err(failure) => Ok(ProposalOutcome::ParseFailed(failure)),
    }
}

/// How a scripted proposer walks its body list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAdvance {
    /// Index by the attempt number within the round (clamped to the last
    /// entry), so every round replays the same attempt sequence.
    #[default]
    ByAttempt,
    /// Consume one body per call across the whole run; the last entry
    /// repeats once the script is exhausted.
    Sequence,
}

/// Fixed-output proposer for tests and protocol audits.
pub struct ScriptedProposer {
    bodies: Vec<String>,
    advance: ScriptAdvance,
    cursor: usize,
}

impl ScriptedProposer {
    pub fn new(bodies: Vec<String>, advance: ScriptAdvance) -> Result<Self> {
        if bodies.is_empty() {
            return Err(Error::Config("scripted proposer needs at least one body".into()));
        }
        Ok(Self { bodies, advance, cursor: 0 })
    }
}

impl Proposer for ScriptedProposer {
    fn id(&self) -> &str {
        "scripted"
    }

    fn propose(&mut self, context: &ProposalContext, _rng: &mut ChaCha8Rng) -> Result<String> {
        let index = match self.advance {
            ScriptAdvance::ByAttempt => (context.attempt_index as usize - 1).min(self.bodies.len() - 1),
            ScriptAdvance::Sequence => {
                let i = self.cursor.min(self.bodies.len() - 1);
                self.cursor += 1;
                i
            }
        };
        Ok(self.bodies[index].clone())
    }
}

/// Gaussian perturbation of a flat numeric configuration.
///
/// `body` must be a flat JSON object of numbers. Keys are visited in
/// sorted order, one standard-normal draw per key (even for zero steps,
/// so the draw layout does not depend on step values). Keys without a
/// step entry stay frozen; every key needs a bound. Integer-typed keys
/// are rounded to nearest after clamping.
pub fn random_perturb(
    body: &str,
    steps: &BTreeMap<String, f64>,
    bounds: &BTreeMap<String, [f64; 2]>,
    integer_keys: &BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let config: BTreeMap<String, f64> = serde_json::from_str(body).map_err(|e| {
        Error::Config(format!("numeric_config body is not a flat number map: {e}"))
    })?;
    let mut out = BTreeMap::new();
    for (key, value) in &config {
        let draw = standard_normal(rng);
        let [lo, hi] = *bounds
            .get(key)
            .ok_or_else(|| Error::Config(format!("no bounds configured for key {key:?}")))?;
        if lo > hi {
            return Err(Error::Config(format!("bounds for key {key:?} are inverted")));
        }
        let step = steps.get(key).copied().unwrap_or(0.0);
        let mut next = (value + step * draw).clamp(lo, hi);
        if integer_keys.contains(key) {
            next = next.round().clamp(lo, hi);
        }
        out.insert(key.clone(), next);
    }
    Ok(serde_json::to_string(&out)?)
}

/// Proposer wrapping [`random_perturb`] around the incumbent.
pub struct RandomPerturbProposer {
    steps: BTreeMap<String, f64>,
    bounds: BTreeMap<String, [f64; 2]>,
    integer_keys: BTreeSet<String>,
}

impl RandomPerturbProposer {
    pub fn new(
        steps: BTreeMap<String, f64>,
        bounds: BTreeMap<String, [f64; 2]>,
        integer_keys: BTreeSet<String>,
    ) -> Self {
        Self { steps, bounds, integer_keys }
    }
}

impl Proposer for RandomPerturbProposer {
    fn id(&self) -> &str {
        "random_perturb"
    }

    fn propose(&mut self, context: &ProposalContext, rng: &mut ChaCha8Rng) -> Result<String> {
        random_perturb(&context.incumbent_body, &self.steps, &self.bounds, &self.integer_keys, rng)
    }
}

/// Transport to an external proposal agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Transport {
    /// Spawn a process, write the context JSON to stdin, read the raw
    /// artifact text from stdout. The default: agents are processes.
    Subprocess { command: Vec<String> },
    /// POST the context JSON to a plain-http endpoint; the response body
    /// is the raw artifact text.
    Http { endpoint: String },
}

fn effective_timeout(configured: Duration) -> Duration {
    match std::env::var(TIMEOUT_ENV_VAR).ok().and_then(|v| v.parse::<u64>().ok()) {
        Some(secs) => Duration::from_secs(secs),
        None => configured,
    }
}

/// Sends the context over the transport and returns the raw response
/// text, to be parsed by the task's parsing function.
pub fn external_propose(
    transport: &Transport,
    context: &ProposalContext,
    timeout: Duration,
) -> Result<String> {
    let mut payload = serde_json::to_string(context)?;
    payload.push('\n');
    let timeout = effective_timeout(timeout);
    match transport {
        Transport::Subprocess { command } => {
            let output = run_with_timeout(command, payload.as_bytes(), timeout).map_err(|f| {
                match f {
                    // A missing binary will fail every attempt the same
                    // way; abort the run instead of burning attempts.
                    crate::process::ProcessFailure::Spawn(e) => Error::Io(std::io::Error::other(
                        format!("proposer command {:?}: {e}", command.join(" ")),
                    )),
                    other => Error::Proposer(format!("{}: {other}", command.join(" "))),
                }
            })?;
            Ok(output.stdout)
        }
        Transport::Http { endpoint } => {
            let response = ureq::post(endpoint)
                .timeout(timeout)
                .set("content-type", "application/json")
                .send_string(&payload)
                .map_err(|e| Error::Proposer(format!("POST {endpoint}: {e}")))?;
            response
                .into_string()
                .map_err(|e| Error::Proposer(format!("reading response from {endpoint}: {e}")))
        }
    }
}

/// Proposer that defers to an external agent over a transport.
pub struct ExternalProposer {
    id: String,
    transport: Transport,
    timeout: Duration,
}

impl ExternalProposer {
    pub fn new(id: impl Into<String>, transport: Transport, timeout: Duration) -> Self {
        Self { id: id.into(), transport, timeout }
    }
}

impl Proposer for ExternalProposer {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(&mut self, context: &ProposalContext, _rng: &mut ChaCha8Rng) -> Result<String> {
        external_propose(&self.transport, context, self.timeout)
    }
}

fn summarize(artifact: &Artifact) -> String {
    match artifact.format_tag() {
        FormatTag::NumericConfig => artifact.body().to_string(),
        FormatTag::RuleYaml => match crate::ruleset::parse_ruleset(artifact.body()) {
            Ok(rules) => format!(
                "rule_yaml sha={:016x} rules={}",
                artifact.content_hash(),
                rules.rules().len()
            ),
            Err(_) => format!("rule_yaml sha={:016x}", artifact.content_hash()),
        },
        FormatTag::OpaqueText => format!(
            "opaque sha={:016x} chars={}",
            artifact.content_hash(),
            artifact.body().chars().count()
        ),
    }
}

/// Builds the top-k history for a history-conditioned proposer: the best
/// `k` distinct evaluated artifacts, sorted descending by acceptance-tier
/// score, ties broken by earlier round, deduplicated by content hash.
pub fn opro_history_context(ledger: &RunLedger, k: usize) -> Result<Vec<HistoryEntry>> {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut entries: Vec<(f64, u32, Artifact)> = Vec::new();
    for round in ledger.rounds() {
        for attempt in &round.attempts {
            let (Some(artifact), Some(score)) = (&attempt.artifact, &attempt.score) else {
                continue;
            };
            if seen.contains_key(&artifact.content_hash()) {
                continue;
            }
            seen.insert(artifact.content_hash(), entries.len());
            entries.push((score.value(), round.round_index, artifact.clone()));
        }
    }
    if entries.is_empty() {
        return Err(Error::Domain("ledger holds no evaluated artifacts".into()));
    }
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).expect("metric values are finite").then(a.1.cmp(&b.1))
    });
    entries.truncate(k);
    let metric_name = ledger
        .rounds()
        .iter()
        .flat_map(|r| r.attempts.iter())
        .find_map(|a| a.score.as_ref().map(|s| s.name().to_string()))
        .expect("entries nonempty implies a scored attempt");
    entries
        .into_iter()
        .map(|(value, _, artifact)| {
            Ok(HistoryEntry { summary: summarize(&artifact), score: MetricValue::new(&metric_name, value)? })
        })
        .collect()
}

/// Serializable proposer configuration; `build` turns it into a live
/// proposer instance (one per investigator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposerSpec {
    Scripted {
        #[serde(default)]
        bodies: Vec<String>,
        #[serde(default)]
        script_path: Option<PathBuf>,
        #[serde(default)]
        advance: ScriptAdvance,
    },
    RandomPerturb {
        steps: BTreeMap<String, f64>,
        bounds: BTreeMap<String, [f64; 2]>,
        #[serde(default)]
        integer_keys: BTreeSet<String>,
    },
    OproLite {
        #[serde(default = "default_history_depth")]
        history_depth: usize,
        transport: Transport,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    External {
        transport: Transport,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_history_depth() -> usize {
    DEFAULT_HISTORY_DEPTH
}

fn default_timeout_secs() -> u64 {
    DEFAULT_PROPOSER_TIMEOUT_SECS
}

impl ProposerSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ProposerSpec::Scripted { .. } => "scripted",
            ProposerSpec::RandomPerturb { .. } => "random_perturb",
            ProposerSpec::OproLite { .. } => "opro_lite",
            ProposerSpec::External { .. } => "external",
        }
    }

    /// How much score history the proposer wants in its context, if any.
    pub fn history_depth(&self) -> Option<usize> {
        match self {
            ProposerSpec::OproLite { history_depth, .. } => Some(*history_depth),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Proposer>> {
        match self {
            ProposerSpec::Scripted { bodies, script_path, advance } => {
                let bodies = match (bodies.is_empty(), script_path) {
                    (false, None) => bodies.clone(),
                    (true, Some(path)) => {
                        let text = std::fs::read_to_string(path).map_err(|e| {
                            Error::Config(format!("reading script {}: {e}", path.display()))
                        })?;
                        serde_json::from_str::<Vec<String>>(&text).map_err(|e| {
                            Error::Config(format!(
                                "script {} must be a JSON array of strings: {e}",
                                path.display()
                            ))
                        })?
                    }
                    (false, Some(_)) => {
                        return Err(Error::Config(
                            "scripted proposer takes bodies or script_path, not both".into(),
                        ))
                    }
                    (true, None) => {
                        return Err(Error::Config(
                            "scripted proposer needs bodies or script_path".into(),
                        ))
                    }
                };
                Ok(Box::new(ScriptedProposer::new(bodies, *advance)?))
            }
            ProposerSpec::RandomPerturb { steps, bounds, integer_keys } => Ok(Box::new(
                RandomPerturbProposer::new(steps.clone(), bounds.clone(), integer_keys.clone()),
            )),
            ProposerSpec::OproLite { transport, timeout_secs, .. } => Ok(Box::new(
                ExternalProposer::new("opro_lite", transport.clone(), Duration::from_secs(*timeout_secs)),
            )),
            ProposerSpec::External { transport, timeout_secs } => Ok(Box::new(
                ExternalProposer::new("external", transport.clone(), Duration::from_secs(*timeout_secs)),
            )),
        }
    }
}
