//! The round-based optimization loop: attempt limits, skip-based early
//! stopping, information-barrier enforcement, one-shot test finalization,
//! and bit-exact ledger replay.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acceptance::{greedy_decide, sa_decide, select_best, temperature_at, TemperatureSchedule};
use crate::artifact::Artifact;
use crate::error::{Error, Result};
use crate::ledger::{AttemptRecord, ConfigSnapshot, RoundDecision, RoundRecord, RunLedger};
use crate::metrics::{EvaluationReport, MetricValue, VisibilityTier};
use crate::proposers::{
    opro_history_context, propose, HistoryEntry, ProposalContext, ProposalOutcome, Proposer,
    ProposerSpec,
};
use crate::rng::{substream, unit_f64};
use crate::task::{validate_report, Task};

pub const DEFAULT_ATTEMPT_LIMIT: u32 = 3;
pub const DEFAULT_SKIP_LIMIT: u32 = 2;

/// Which acceptance rule drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    SimulatedAnnealing,
    /// K investigators per round; best proposal is selected, then tested
    /// against the incumbent with greedy acceptance.
    Parallel,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::SimulatedAnnealing => "simulated_annealing",
            Strategy::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "simulated_annealing" | "sa" => Ok(Strategy::SimulatedAnnealing),
            "parallel" => Ok(Strategy::Parallel),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Static configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub strategy: Strategy,
    #[serde(default = "default_attempt_limit")]
    pub attempt_limit: u32,
    #[serde(default = "default_skip_limit")]
    pub skip_limit: u32,
    pub round_budget: u32,
    #[serde(default)]
    pub schedule: Option<TemperatureSchedule>,
    #[serde(default = "default_investigators")]
    pub investigators: u32,
    #[serde(default)]
    pub directives: Option<Vec<String>>,
    pub rng_seed: u64,
}

fn default_attempt_limit() -> u32 {
    DEFAULT_ATTEMPT_LIMIT
}

fn default_skip_limit() -> u32 {
    DEFAULT_SKIP_LIMIT
}

fn default_investigators() -> u32 {
    1
}

impl LoopConfig {
    /// A greedy single-investigator config with the default limits.
    pub fn greedy(round_budget: u32, rng_seed: u64) -> Self {
        Self {
            strategy: Strategy::Greedy,
            attempt_limit: DEFAULT_ATTEMPT_LIMIT,
            skip_limit: DEFAULT_SKIP_LIMIT,
            round_budget,
            schedule: None,
            investigators: 1,
            directives: None,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempt_limit < 1 {
            return Err(Error::Config("attempt_limit must be >= 1".into()));
        }
        if self.skip_limit < 1 {
            return Err(Error::Config("skip_limit must be >= 1".into()));
        }
        if self.round_budget < 1 {
            return Err(Error::Config("round_budget must be >= 1".into()));
        }
        match self.strategy {
            Strategy::SimulatedAnnealing => {
                if self.schedule.is_none() {
                    return Err(Error::Config(
                        "schedule: required when strategy = simulated_annealing".into(),
                    ));
                }
            }
            Strategy::Parallel => {
                if self.investigators < 2 {
                    return Err(Error::Config(
                        "investigators: parallel strategy requires at least 2".into(),
                    ));
                }
                match &self.directives {
                    Some(d) if d.len() == self.investigators as usize => {}
                    Some(d) => {
                        return Err(Error::Config(format!(
                            "directives: expected {} entries (one per investigator), got {}",
                            self.investigators,
                            d.len()
                        )))
                    }
                    None => {
                        return Err(Error::Config(
                            "directives: required when strategy = parallel".into(),
                        ))
                    }
                }
            }
            Strategy::Greedy => {}
        }
        if self.strategy != Strategy::Parallel {
            if self.investigators != 1 {
                return Err(Error::Config(
                    "investigators: more than 1 requires strategy = parallel".into(),
                ));
            }
            if let Some(d) = &self.directives {
                if d.len() != 1 {
                    return Err(Error::Config(
                        "directives: sequential runs take at most one directive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, task_id: &str, proposer_id: &str) -> ConfigSnapshot {
        ConfigSnapshot {
            strategy: self.strategy.as_str().to_string(),
            t0: self.schedule.map(|s| s.t0()),
            gamma: self.schedule.map(|s| s.gamma()),
            attempt_limit: self.attempt_limit,
            skip_limit: self.skip_limit,
            round_budget: self.round_budget,
            investigators: self.investigators,
            directives: self.directives.clone(),
            rng_seed: self.rng_seed,
            task_id: task_id.to_string(),
            proposer_id: proposer_id.to_string(),
        }
    }

    pub fn from_snapshot(snapshot: &ConfigSnapshot) -> Result<Self> {
        let schedule = match (snapshot.t0, snapshot.gamma) {
            (Some(t0), Some(gamma)) => Some(TemperatureSchedule::new(t0, gamma)?),
            (None, None) => None,
            _ => return Err(Error::Config("snapshot has t0 without gamma (or vice versa)".into())),
        };
        let config = Self {
            strategy: Strategy::parse(&snapshot.strategy)?,
            attempt_limit: snapshot.attempt_limit,
            skip_limit: snapshot.skip_limit,
            round_budget: snapshot.round_budget,
            schedule,
            investigators: snapshot.investigators,
            directives: snapshot.directives.clone(),
            rng_seed: snapshot.rng_seed,
        };
        config.validate()?;
        Ok(config)
    }

    fn single_directive(&self) -> Option<String> {
        match (&self.strategy, &self.directives) {
            (Strategy::Parallel, _) => None,
            (_, Some(d)) => d.first().cloned(),
            _ => None,
        }
    }
}

/// Mutable state the loop carries between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub incumbent: Artifact,
    pub incumbent_score: MetricValue,
    /// Rounds completed so far (skipped rounds included); the next round
    /// is `round_index + 1`, which is also the temperature index k.
    pub round_index: u32,
    pub consecutive_skips: u32,
    pub finalized: bool,
}

impl LoopState {
    pub fn new(incumbent: Artifact, incumbent_score: MetricValue) -> Self {
        Self { incumbent, incumbent_score, round_index: 0, consecutive_skips: 0, finalized: false }
    }
}

/// True once the run must stop: the skip limit was hit or the round
/// budget is exhausted.
pub fn should_stop(state: &LoopState, config: &LoopConfig) -> bool {
    state.consecutive_skips >= config.skip_limit || state.round_index >= config.round_budget
}

fn score_from(report: &EvaluationReport, task: &dyn Task) -> Result<MetricValue> {
    report.metric(task.primary_metric()).cloned().ok_or_else(|| {
        Error::Evaluator(format!(
            "evaluator response lacks the primary metric {:?}",
            task.primary_metric()
        ))
    })
}

fn train_diagnostics(task: &dyn Task, incumbent: &Artifact) -> Result<EvaluationReport> {
    let report = task.evaluate(incumbent, VisibilityTier::TrainDiagnostics)?;
    validate_report(&report, incumbent, VisibilityTier::TrainDiagnostics)?;
    Ok(report)
}

/// Runs one sequential round: up to `attempt_limit` proposals, each
/// scored on the validation tier; the first accepted attempt ends the
/// round. Parse and proposer failures consume attempts. In simulated
/// annealing runs each evaluated attempt consumes exactly one uniform
/// draw from the round's substream (slot 0), recorded in the round.
pub fn run_round(
    state: &mut LoopState,
    config: &LoopConfig,
    proposer: &mut dyn Proposer,
    task: &dyn Task,
    history: Option<Vec<HistoryEntry>>,
) -> Result<RoundRecord> {
    if state.finalized {
        return Err(Error::Protocol("run is finalized; no further rounds".into()));
    }
    if config.strategy == Strategy::Parallel {
        return Err(Error::Config("parallel runs go through run_parallel_round".into()));
    }
    let round_index = state.round_index + 1;
    let temperature = match (config.strategy, &config.schedule) {
        (Strategy::SimulatedAnnealing, Some(schedule)) => {
            Some(temperature_at(schedule, round_index)?)
        }
        (Strategy::SimulatedAnnealing, None) => {
            return Err(Error::Config("simulated annealing requires a schedule".into()))
        }
        _ => None,
    };
    let mut rng = substream(config.rng_seed, round_index, 0);
    let train_report = train_diagnostics(task, &state.incumbent)?;
    let directive = config.single_directive();

    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut rng_draws: Vec<f64> = Vec::new();
    let mut feedback: Option<String> = None;
    let mut decision = RoundDecision::Skipped;
    let mut accepted_artifact_hash = None;

    for attempt_index in 1..=config.attempt_limit {
        let context = ProposalContext::build(
            &state.incumbent,
            &state.incumbent_score,
            &train_report,
            directive.clone(),
            history.clone(),
            attempt_index,
            feedback.clone(),
        )?;
        let outcome = match propose(proposer, task, &context, &mut rng) {
            Ok(outcome) => outcome,
            Err(Error::Proposer(msg)) => {
                attempts.push(AttemptRecord::failed(format!("proposer failure: {msg}")));
                feedback = Some(format!("attempt {attempt_index} failed: proposer failure: {msg}"));
                continue;
            }
            Err(other) => return Err(other),
        };
        match outcome {
            ProposalOutcome::ParseFailed(failure) => {
                attempts.push(AttemptRecord::failed(format!("parse failure: {}", failure.error)));
                feedback =
                    Some(format!("attempt {attempt_index} did not parse: {}", failure.error));
            }
            ProposalOutcome::Parsed(candidate) => {
                let report = task.evaluate(&candidate, VisibilityTier::Validation)?;
                validate_report(&report, &candidate, VisibilityTier::Validation)?;
                let score = score_from(&report, task)?;
                let verdict = match config.strategy {
                    Strategy::Greedy => greedy_decide(&state.incumbent_score, &score)?,
                    Strategy::SimulatedAnnealing => {
                        let draw = unit_f64(&mut rng);
                        rng_draws.push(draw);
                        sa_decide(
                            &state.incumbent_score,
                            &score,
                            temperature.expect("SA round has a temperature"),
                            draw,
                        )?
                    }
                    Strategy::Parallel => unreachable!("rejected above"),
                };
                let delta = score.value() - state.incumbent_score.value();
                attempts.push(AttemptRecord::evaluated(candidate.clone(), score.clone()));
                if verdict.accepted {
                    accepted_artifact_hash = Some(candidate.content_hash());
                    state.incumbent = candidate;
                    state.incumbent_score = score;
                    decision = RoundDecision::Accepted;
                    break;
                }
                feedback = Some(format!(
                    "attempt {attempt_index} rejected: {} = {} vs incumbent {} (delta {delta:+e})",
                    task.primary_metric(),
                    score.value(),
                    state.incumbent_score.value(),
                ));
            }
        }
    }

    if decision == RoundDecision::Accepted {
        state.consecutive_skips = 0;
    } else {
        state.consecutive_skips += 1;
    }
    state.round_index = round_index;

    Ok(RoundRecord {
        round_index,
        directive,
        attempts,
        temperature,
        rng_draws,
        decision,
        accepted_artifact_hash,
    })
}

enum SlotOutcome {
    Evaluated { artifact: Artifact, score: MetricValue },
    Failed { error: String },
}

fn investigate(
    slot: usize,
    proposer: &mut dyn Proposer,
    task: &dyn Task,
    context: &ProposalContext,
    rng: &mut ChaCha8Rng,
) -> Result<SlotOutcome> {
    let outcome = match propose(proposer, task, context, rng) {
        Ok(outcome) => outcome,
        Err(Error::Proposer(msg)) => {
            return Ok(SlotOutcome::Failed {
                error: format!("investigator {slot} proposer failure: {msg}"),
            })
        }
        Err(other) => return Err(other),
    };
    match outcome {
        ProposalOutcome::ParseFailed(failure) => Ok(SlotOutcome::Failed {
            error: format!("investigator {slot} parse failure: {}", failure.error),
        }),
        ProposalOutcome::Parsed(candidate) => {
            let report = task.evaluate(&candidate, VisibilityTier::Validation)?;
            validate_report(&report, &candidate, VisibilityTier::Validation)?;
            let score = score_from(&report, task)?;
            Ok(SlotOutcome::Evaluated { artifact: candidate, score })
        }
    }
}

/// Runs one parallel round: K investigators propose and evaluate
/// concurrently (one substream per investigator, slots 1..=K), results
/// are ordered by investigator index, the best survivor is selected, and
/// the selection is tested against the incumbent with greedy acceptance.
/// A failed investigator marks only its own slot; all-fail skips the
/// round.
pub fn run_parallel_round(
    state: &mut LoopState,
    config: &LoopConfig,
    proposers: &mut [Box<dyn Proposer>],
    task: &dyn Task,
) -> Result<RoundRecord> {
    if state.finalized {
        return Err(Error::Protocol("run is finalized; no further rounds".into()));
    }
    if config.strategy != Strategy::Parallel {
        return Err(Error::Config("run_parallel_round requires strategy = parallel".into()));
    }
    if proposers.len() != config.investigators as usize {
        return Err(Error::Config(format!(
            "expected {} proposers, got {}",
            config.investigators,
            proposers.len()
        )));
    }
    let directives = config.directives.as_ref().expect("validated: parallel has directives");
    let round_index = state.round_index + 1;
    let train_report = train_diagnostics(task, &state.incumbent)?;

    let mut contexts = Vec::with_capacity(proposers.len());
    for directive in directives {
        contexts.push(ProposalContext::build(
            &state.incumbent,
            &state.incumbent_score,
            &train_report,
            Some(directive.clone()),
            None,
            1,
            None,
        )?);
    }

    let outcomes: Vec<Result<SlotOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = proposers
            .iter_mut()
            .zip(&contexts)
            .enumerate()
            .map(|(slot, (proposer, context))| {
                let mut rng = substream(config.rng_seed, round_index, slot as u32 + 1);
                scope.spawn(move || investigate(slot, proposer.as_mut(), task, context, &mut rng))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("investigator thread panicked")).collect()
    });

    let mut attempts = Vec::with_capacity(outcomes.len());
    let mut survivors: Vec<(usize, MetricValue)> = Vec::new();
    for (slot, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            SlotOutcome::Evaluated { artifact, score } => {
                survivors.push((slot, score.clone()));
                attempts.push(AttemptRecord::evaluated(artifact, score));
            }
            SlotOutcome::Failed { error } => attempts.push(AttemptRecord::failed(error)),
        }
    }

    let mut decision = RoundDecision::Skipped;
    let mut accepted_artifact_hash = None;
    if !survivors.is_empty() {
        let winner = select_best(&survivors)?;
        let winner_score = attempts[winner].score.clone().expect("winner was evaluated");
        let verdict = greedy_decide(&state.incumbent_score, &winner_score)?;
        if verdict.accepted {
            let artifact = attempts[winner].artifact.clone().expect("winner was evaluated");
            accepted_artifact_hash = Some(artifact.content_hash());
            state.incumbent = artifact;
            state.incumbent_score = winner_score;
            decision = RoundDecision::Accepted;
        }
    }

    if decision == RoundDecision::Accepted {
        state.consecutive_skips = 0;
    } else {
        state.consecutive_skips += 1;
    }
    state.round_index = round_index;

    Ok(RoundRecord {
        round_index,
        directive: None,
        attempts,
        temperature: None,
        rng_draws: Vec::new(),
        decision,
        accepted_artifact_hash,
    })
}

/// The one-shot test evaluation. Callable exactly once, and only after
/// the loop has stopped; the report seals the ledger.
pub fn finalize(
    state: &mut LoopState,
    config: &LoopConfig,
    ledger: &mut RunLedger,
    task: &dyn Task,
) -> Result<EvaluationReport> {
    if state.finalized || ledger.is_finalized() {
        return Err(Error::Barrier("finalize may be called exactly once per run".into()));
    }
    if !should_stop(state, config) {
        return Err(Error::Protocol(
            "finalize requires the loop to have stopped (skip limit or round budget)".into(),
        ));
    }
    let report = task.evaluate(&state.incumbent, VisibilityTier::Test)?;
    validate_report(&report, &state.incumbent, VisibilityTier::Test)?;
    ledger.seal(report.clone())?;
    state.finalized = true;
    Ok(report)
}

/// Result of driving a run to completion (or to its first infrastructure
/// failure, in which case the partial ledger is preserved).
pub struct RunOutcome {
    pub ledger: RunLedger,
    pub final_state: Option<LoopState>,
    pub error: Option<Error>,
}

impl RunOutcome {
    fn aborted(ledger: RunLedger, state: Option<LoopState>, error: Error) -> Self {
        Self { ledger, final_state: state, error: Some(error) }
    }
}

/// Drives a full run: seed evaluation, rounds until [`should_stop`],
/// then finalization. Configuration problems surface as `Err`;
/// infrastructure failures mid-run come back inside the outcome with the
/// partial ledger intact.
pub fn execute(config: &LoopConfig, task: &dyn Task, proposer_spec: &ProposerSpec) -> Result<RunOutcome> {
    config.validate()?;
    let seed_artifact = task.seed_artifact()?;
    let mut ledger = RunLedger::new(config.snapshot(task.id(), proposer_spec.id()));

    let seed_report = match task.evaluate(&seed_artifact, VisibilityTier::Validation) {
        Ok(report) => report,
        Err(e) => return Ok(RunOutcome::aborted(ledger, None, e)),
    };
    if let Err(e) = validate_report(&seed_report, &seed_artifact, VisibilityTier::Validation) {
        return Ok(RunOutcome::aborted(ledger, None, e));
    }
    let seed_score = match score_from(&seed_report, task) {
        Ok(score) => score,
        Err(e) => return Ok(RunOutcome::aborted(ledger, None, e)),
    };
    let mut state = LoopState::new(seed_artifact, seed_score);

    if config.strategy == Strategy::Parallel {
        let mut proposers: Vec<Box<dyn Proposer>> = Vec::new();
        for _ in 0..config.investigators {
            proposers.push(proposer_spec.build()?);
        }
        while !should_stop(&state, config) {
            let record = match run_parallel_round(&mut state, config, &mut proposers, task) {
                Ok(record) => record,
                Err(e) => return Ok(RunOutcome::aborted(ledger, Some(state), e)),
            };
            if let Err(e) = ledger.append(record) {
                return Ok(RunOutcome::aborted(ledger, Some(state), e));
            }
        }
    } else {
        let mut proposer = proposer_spec.build()?;
        while !should_stop(&state, config) {
            let history = match proposer_spec.history_depth() {
                Some(depth) if ledger.evaluation_count() > 0 => {
                    match opro_history_context(&ledger, depth) {
                        Ok(history) => Some(history),
                        Err(e) => return Ok(RunOutcome::aborted(ledger, Some(state), e)),
                    }
                }
                _ => None,
            };
            let record = match run_round(&mut state, config, proposer.as_mut(), task, history) {
                Ok(record) => record,
                Err(e) => return Ok(RunOutcome::aborted(ledger, Some(state), e)),
            };
            if let Err(e) = ledger.append(record) {
                return Ok(RunOutcome::aborted(ledger, Some(state), e));
            }
        }
    }

    if let Err(e) = finalize(&mut state, config, &mut ledger, task) {
        return Ok(RunOutcome::aborted(ledger, Some(state), e));
    }
    Ok(RunOutcome { ledger, final_state: Some(state), error: None })
}

/// Walks two ledger JSON trees in document order and names the first
/// divergent field.
fn first_divergence(path: &str, a: &serde_json::Value, b: &serde_json::Value) -> Option<(String, String)> {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: Vec<&String> = ma.keys().chain(mb.keys().filter(|k| !ma.contains_key(*k))).collect();
            for key in keys {
                let sub = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match (ma.get(key), mb.get(key)) {
                    (Some(va), Some(vb)) => {
                        if let Some(d) = first_divergence(&sub, va, vb) {
                            return Some(d);
                        }
                    }
                    (Some(_), None) => return Some((sub, "field missing in replay".into())),
                    (None, Some(_)) => return Some((sub, "field missing in original".into())),
                    (None, None) => unreachable!(),
                }
            }
            None
        }
        (Value::Array(va), Value::Array(vb)) => {
            for (i, (ia, ib)) in va.iter().zip(vb.iter()).enumerate() {
                if let Some(d) = first_divergence(&format!("{path}[{i}]"), ia, ib) {
                    return Some(d);
                }
            }
            if va.len() != vb.len() {
                return Some((path.to_string(), format!("length {} vs {}", va.len(), vb.len())));
            }
            None
        }
        _ if a == b => None,
        _ => Some((path.to_string(), format!("{a} vs {b}"))),
    }
}

/// Re-executes a run from its ledger's config snapshot and verifies the
/// result is byte-identical. Requires the original task and proposer
/// spec (the snapshot holds only their identifiers, which are checked).
pub fn replay(original: &RunLedger, task: &dyn Task, proposer_spec: &ProposerSpec) -> Result<RunLedger> {
    if original.config.task_id != task.id() {
        return Err(Error::Config(format!(
            "ledger was recorded against task {:?}, got {:?}",
            original.config.task_id,
            task.id()
        )));
    }
    if original.config.proposer_id != proposer_spec.id() {
        return Err(Error::Config(format!(
            "ledger was recorded against proposer {:?}, got {:?}",
            original.config.proposer_id,
            proposer_spec.id()
        )));
    }
    let config = LoopConfig::from_snapshot(&original.config)?;
    let outcome = execute(&config, task, proposer_spec)?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    let original_json = original.to_json()?;
    let replayed_json = outcome.ledger.to_json()?;
    if original_json == replayed_json {
        return Ok(outcome.ledger);
    }
    // Locate the first divergent field in document order (the generic
    // walk below visits object keys alphabetically, which would report
    // the sealed final report before the round that caused it).
    let a: serde_json::Value = serde_json::from_str(&original_json)?;
    let b: serde_json::Value = serde_json::from_str(&replayed_json)?;
    let (location, detail) = ["schema_version", "config", "rounds", "final_report"]
        .iter()
        .find_map(|key| first_divergence(key, &a[*key], &b[*key]))
        .unwrap_or_else(|| ("<unknown>".into(), "ledgers differ only in formatting".into()));
    Err(Error::ReplayMismatch { location, detail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::FormatTag;
    use crate::proposers::ScriptAdvance;
    use crate::task::ParseFailure;

    /// Toy task: the artifact body is a decimal score; every tier scores
    /// it verbatim. Tier diagnostics carry tier-specific sentinels so
    /// leak tests can grep for them.
    struct ScoreTask;

    impl Task for ScoreTask {
        fn id(&self) -> &str {
            "score"
        }

        fn primary_metric(&self) -> &str {
            "score"
        }

        fn seed_artifact(&self) -> crate::error::Result<Artifact> {
            Artifact::new(FormatTag::OpaqueText, "0.5")
        }

        fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure> {
            let body = raw.trim();
            // "fail" parses fine but faults at evaluation time.
            if body != "fail" {
                body.parse::<f64>().map_err(|e| ParseFailure {
                    raw_output: raw.to_string(),
                    error: format!("not a score: {e}"),
                })?;
            }
            Artifact::new(FormatTag::OpaqueText, body)
                .map_err(|e| ParseFailure { raw_output: raw.to_string(), error: e.to_string() })
        }

        fn evaluate(
            &self,
            artifact: &Artifact,
            tier: VisibilityTier,
        ) -> crate::error::Result<crate::metrics::EvaluationReport> {
            if artifact.body() == "fail" {
                return Err(Error::Evaluator("synthetic evaluator fault".into()));
            }
            let value: f64 = artifact
                .body()
                .parse()
                .map_err(|e| Error::Evaluator(format!("unscorable artifact: {e}")))?;
            let sentinel = match tier {
                VisibilityTier::TrainDiagnostics => "TRAIN_DIAG",
                VisibilityTier::Validation => "VALIDATION_SENTINEL",
                VisibilityTier::Test => "TEST_SENTINEL",
            };
            Ok(crate::metrics::EvaluationReport::new(
                tier,
                vec![MetricValue::new("score", value).unwrap()],
                format!("{sentinel} for {:016x}", artifact.content_hash()),
                artifact.content_hash(),
            ))
        }
    }

    fn scripted(bodies: &[&str]) -> ProposerSpec {
        ProposerSpec::Scripted {
            bodies: bodies.iter().map(|s| s.to_string()).collect(),
            script_path: None,
            advance: ScriptAdvance::ByAttempt,
        }
    }

    fn sa_config(round_budget: u32, seed: u64) -> LoopConfig {
        LoopConfig {
            strategy: Strategy::SimulatedAnnealing,
            schedule: Some(TemperatureSchedule::new(0.054, 0.7).unwrap()),
            ..LoopConfig::greedy(round_budget, seed)
        }
    }

    fn parallel_config(round_budget: u32, seed: u64) -> LoopConfig {
        LoopConfig {
            strategy: Strategy::Parallel,
            investigators: 3,
            directives: Some(vec!["wide".into(), "deep".into(), "calibrate".into()]),
            ..LoopConfig::greedy(round_budget, seed)
        }
    }

    #[test]
    fn config_invariants_validated() {
        let mut config = LoopConfig::greedy(5, 1);
        config.strategy = Strategy::SimulatedAnnealing;
        assert!(matches!(config.validate(), Err(Error::Config(_))));
        let mut config = parallel_config(5, 1);
        config.directives = Some(vec!["only one".into()]);
        assert!(config.validate().is_err());
        config.directives = None;
        assert!(config.validate().is_err());
        let mut config = LoopConfig::greedy(5, 1);
        config.investigators = 3;
        assert!(config.validate().is_err());
    }

    #[test]
    fn improving_proposal_accepted_in_one_attempt() {
        let config = LoopConfig::greedy(5, 7);
        let outcome = execute(&config, &ScoreTask, &scripted(&["0.9"])).unwrap();
        assert!(outcome.error.is_none(), "{:?}", outcome.error.map(|e| e.to_string()));
        let ledger = outcome.ledger;
        let first = &ledger.rounds()[0];
        assert_eq!(first.decision, RoundDecision::Accepted);
        assert_eq!(first.attempts.len(), 1);
        assert!(first.temperature.is_none());
        assert!(first.rng_draws.is_empty());
    }

    #[test]
    fn all_regression_run_stops_after_skip_limit() {
        // 3 regressions per round, 2 consecutive skips terminate.
        let config = LoopConfig::greedy(10, 7);
        let outcome = execute(&config, &ScoreTask, &scripted(&["0.4", "0.3", "0.2"])).unwrap();
        assert!(outcome.error.is_none());
        let ledger = outcome.ledger;
        assert_eq!(ledger.rounds().len(), 2);
        assert_eq!(ledger.attempt_count(), 6);
        assert_eq!(ledger.evaluation_count(), 6);
        assert!(ledger.rounds().iter().all(|r| r.decision == RoundDecision::Skipped));
        let state = outcome.final_state.unwrap();
        assert_eq!(state.consecutive_skips, 2);
        assert!(state.finalized);
        assert!(ledger.final_report().is_some());
    }

    #[test]
    fn tie_is_not_an_improvement() {
        // Proposing the incumbent's own score never accepts.
        let config = LoopConfig::greedy(10, 7);
        let outcome = execute(&config, &ScoreTask, &scripted(&["0.5"])).unwrap();
        assert_eq!(outcome.ledger.rounds().len(), 2);
        assert!(outcome.ledger.rounds().iter().all(|r| r.decision == RoundDecision::Skipped));
    }

    #[test]
    fn greedy_incumbent_scores_strictly_increase() {
        let bodies = ["0.6", "0.55", "0.7"]; // attempt-indexed; round 1 accepts 0.6, round 2 rejects 0.55 then... 0.6 ties
        let config = LoopConfig::greedy(10, 7);
        let outcome = execute(&config, &ScoreTask, &scripted(&bodies)).unwrap();
        let mut last = 0.5;
        for round in outcome.ledger.rounds() {
            if round.decision == RoundDecision::Accepted {
                let accepted = round.attempts.last().unwrap().score.clone().unwrap();
                assert!(accepted.value() > last);
                last = accepted.value();
            }
        }
    }

    #[test]
    fn sa_records_temperature_and_one_draw_per_evaluated_attempt() {
        let config = sa_config(4, 11);
        let outcome = execute(&config, &ScoreTask, &scripted(&["0.4", "0.3", "0.2"])).unwrap();
        assert!(outcome.error.is_none());
        for round in outcome.ledger.rounds() {
            let evaluated = round.attempts.iter().filter(|a| a.score.is_some()).count();
            assert_eq!(round.rng_draws.len(), evaluated);
            let expect_t = 0.054 * 0.7f64.powi(round.round_index as i32 - 1);
            assert!((round.temperature.unwrap() - expect_t).abs() < 1e-15);
        }
    }

    #[test]
    fn sa_accepts_small_regression_with_low_draw() {
        // Regression of exactly 1/114 at T0 = 0.054 has p ~ 0.8501, so
        // any draw below that accepts on attempt 1.
        struct FixedDelta;
        impl Task for FixedDelta {
            fn id(&self) -> &str {
                "fixed_delta"
            }
            fn primary_metric(&self) -> &str {
                "score"
            }
            fn seed_artifact(&self) -> crate::error::Result<Artifact> {
                Artifact::new(FormatTag::OpaqueText, "seed")
            }
            fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure> {
                Artifact::new(FormatTag::OpaqueText, raw.trim())
                    .map_err(|e| ParseFailure { raw_output: raw.into(), error: e.to_string() })
            }
            fn evaluate(
                &self,
                artifact: &Artifact,
                tier: VisibilityTier,
            ) -> crate::error::Result<crate::metrics::EvaluationReport> {
                let value = if artifact.body() == "seed" { 0.9 } else { 0.9 - 1.0 / 114.0 };
                Ok(crate::metrics::EvaluationReport::new(
                    tier,
                    vec![MetricValue::new("score", value).unwrap()],
                    "",
                    artifact.content_hash(),
                ))
            }
        }
        // Find a seed whose round-1 substream yields a first draw < 0.85.
        let mut chosen = None;
        for seed in 0..100u64 {
            let mut rng = substream(seed, 1, 0);
            if unit_f64(&mut rng) < 0.8 {
                chosen = Some(seed);
                break;
            }
        }
        let seed = chosen.expect("some seed draws below 0.8");
        let config = sa_config(1, seed);
        let outcome = execute(&config, &FixedDelta, &scripted(&["regress"])).unwrap();
        let round = &outcome.ledger.rounds()[0];
        assert_eq!(round.decision, RoundDecision::Accepted);
        assert_eq!(round.attempts.len(), 1);
        assert_eq!(round.rng_draws.len(), 1);
        assert!(round.rng_draws[0] < 0.85);
    }

    #[test]
    fn parse_failures_consume_attempts() {
        let config = LoopConfig::greedy(10, 7);
        let outcome =
            execute(&config, &ScoreTask, &scripted(&["not a number", "0.9"])).unwrap();
        let first = &outcome.ledger.rounds()[0];
        assert_eq!(first.decision, RoundDecision::Accepted);
        assert_eq!(first.attempts.len(), 2);
        assert!(!first.attempts[0].parse_ok);
        assert!(first.attempts[0].error.as_ref().unwrap().contains("parse failure"));
        assert!(first.attempts[1].parse_ok);
    }

    #[test]
    fn evaluator_failure_aborts_with_partial_ledger() {
        let config = LoopConfig::greedy(10, 7);
        // Round 1 accepts 0.9; round 2 proposes "fail" on every attempt,
        // whose evaluation faults.
        let spec = ProposerSpec::Scripted {
            bodies: vec!["0.9".into(), "fail".into()],
            script_path: None,
            advance: ScriptAdvance::Sequence,
        };
        let outcome = execute(&config, &ScoreTask, &spec).unwrap();
        assert!(matches!(outcome.error, Some(Error::Evaluator(_))));
        assert_eq!(outcome.ledger.rounds().len(), 1);
        assert!(outcome.ledger.final_report().is_none());
    }

    #[test]
    fn parallel_round_selects_best_then_applies_greedy() {
        // Each investigator's directive tells the scripted double what to
        // propose; here all three propose fixed scores via a per-slot
        // proposer built from the same spec, so use a custom proposer.
        struct SlotProposer(Vec<String>, usize);
        impl Proposer for SlotProposer {
            fn id(&self) -> &str {
                "slot"
            }
            fn propose(
                &mut self,
                _context: &ProposalContext,
                _rng: &mut ChaCha8Rng,
            ) -> crate::error::Result<String> {
                Ok(self.0[self.1].clone())
            }
        }
        let config = parallel_config(5, 3);
        let seed = ScoreTask.seed_artifact().unwrap();
        let seed_score = MetricValue::new("score", 0.92).unwrap();
        let mut state = LoopState::new(seed, seed_score);
        let bodies = vec!["0.90".to_string(), "0.93".to_string(), "0.91".to_string()];
        let mut proposers: Vec<Box<dyn Proposer>> = (0..3)
            .map(|i| Box::new(SlotProposer(bodies.clone(), i)) as Box<dyn Proposer>)
            .collect();
        let record = run_parallel_round(&mut state, &config, &mut proposers, &ScoreTask).unwrap();
        assert_eq!(record.decision, RoundDecision::Accepted);
        assert_eq!(record.attempts.len(), 3);
        assert_eq!(state.incumbent_score.value(), 0.93);

        // Tie-break: scores [0.90, 0.91, 0.91] vs incumbent 0.92 pick
        // investigator 1, then greedy rejects.
        let bodies = vec!["0.90".to_string(), "0.91".to_string(), "0.91".to_string()];
        let mut proposers: Vec<Box<dyn Proposer>> = (0..3)
            .map(|i| Box::new(SlotProposer(bodies.clone(), i)) as Box<dyn Proposer>)
            .collect();
        let record = run_parallel_round(&mut state, &config, &mut proposers, &ScoreTask).unwrap();
        assert_eq!(record.decision, RoundDecision::Skipped);
        assert_eq!(state.consecutive_skips, 1);
    }

    #[test]
    fn parallel_survivors_cover_failed_slots() {
        struct SlotProposer(usize);
        impl Proposer for SlotProposer {
            fn id(&self) -> &str {
                "slot"
            }
            fn propose(
                &mut self,
                _context: &ProposalContext,
                _rng: &mut ChaCha8Rng,
            ) -> crate::error::Result<String> {
                match self.0 {
                    0 => Ok("garbage".to_string()), // parse failure
                    1 => Ok("0.93".to_string()),
                    _ => Ok("0.91".to_string()),
                }
            }
        }
        let config = parallel_config(5, 3);
        let seed = ScoreTask.seed_artifact().unwrap();
        let mut state = LoopState::new(seed, MetricValue::new("score", 0.92).unwrap());
        let mut proposers: Vec<Box<dyn Proposer>> =
            (0..3).map(|i| Box::new(SlotProposer(i)) as Box<dyn Proposer>).collect();
        let record = run_parallel_round(&mut state, &config, &mut proposers, &ScoreTask).unwrap();
        assert_eq!(record.decision, RoundDecision::Accepted);
        assert!(!record.attempts[0].parse_ok);
        assert_eq!(state.incumbent_score.value(), 0.93);

        // All investigators failing skips the round.
        struct Broken;
        impl Proposer for Broken {
            fn id(&self) -> &str {
                "broken"
            }
            fn propose(
                &mut self,
                _context: &ProposalContext,
                _rng: &mut ChaCha8Rng,
            ) -> crate::error::Result<String> {
                Err(Error::Proposer("down".into()))
            }
        }
        let mut proposers: Vec<Box<dyn Proposer>> =
            (0..3).map(|_| Box::new(Broken) as Box<dyn Proposer>).collect();
        let record = run_parallel_round(&mut state, &config, &mut proposers, &ScoreTask).unwrap();
        assert_eq!(record.decision, RoundDecision::Skipped);
        assert!(record.attempts.iter().all(|a| !a.parse_ok));
    }

    #[test]
    fn finalize_twice_is_barrier_violation() {
        let config = LoopConfig::greedy(1, 7);
        let seed = ScoreTask.seed_artifact().unwrap();
        let mut state = LoopState::new(seed, MetricValue::new("score", 0.5).unwrap());
        let mut ledger = RunLedger::new(config.snapshot("score", "scripted"));
        state.round_index = 1; // budget exhausted
        finalize(&mut state, &config, &mut ledger, &ScoreTask).unwrap();
        let err = finalize(&mut state, &config, &mut ledger, &ScoreTask).unwrap_err();
        assert!(matches!(err, Error::Barrier(_)));
    }

    #[test]
    fn finalize_before_stopping_is_protocol_error() {
        let config = LoopConfig::greedy(5, 7);
        let seed = ScoreTask.seed_artifact().unwrap();
        let mut state = LoopState::new(seed, MetricValue::new("score", 0.5).unwrap());
        let mut ledger = RunLedger::new(config.snapshot("score", "scripted"));
        assert!(matches!(
            finalize(&mut state, &config, &mut ledger, &ScoreTask),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn exactly_one_test_evaluation_per_run() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Counting(AtomicUsize);
        impl Task for Counting {
            fn id(&self) -> &str {
                "counting"
            }
            fn primary_metric(&self) -> &str {
                "score"
            }
            fn seed_artifact(&self) -> crate::error::Result<Artifact> {
                ScoreTask.seed_artifact()
            }
            fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure> {
                ScoreTask.parse(raw)
            }
            fn evaluate(
                &self,
                artifact: &Artifact,
                tier: VisibilityTier,
            ) -> crate::error::Result<crate::metrics::EvaluationReport> {
                if tier == VisibilityTier::Test {
                    self.0.fetch_add(1, Ordering::SeqCst);
                }
                ScoreTask.evaluate(artifact, tier)
            }
        }
        let task = Counting(AtomicUsize::new(0));
        let config = LoopConfig::greedy(10, 7);
        let outcome = execute(&config, &task, &scripted(&["0.4"])).unwrap();
        assert!(outcome.error.is_none());
        assert_eq!(task.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn replay_reproduces_greedy_and_sa_byte_for_byte() {
        for config in [LoopConfig::greedy(6, 99), sa_config(6, 99)] {
            let spec = scripted(&["0.63", "0.41", "0.72"]);
            let outcome = execute(&config, &ScoreTask, &spec).unwrap();
            assert!(outcome.error.is_none());
            let replayed = replay(&outcome.ledger, &ScoreTask, &spec).unwrap();
            assert_eq!(replayed.to_json().unwrap(), outcome.ledger.to_json().unwrap());
        }
    }

    #[test]
    fn replay_detects_tampered_seed_in_round_one() {
        // SA consumes draws, so a different seed shows up in round 1.
        let spec = scripted(&["0.47", "0.46", "0.44"]); // all regressions: SA decisions draw every attempt
        let outcome = execute(&sa_config(6, 1234), &ScoreTask, &spec).unwrap();
        assert!(outcome.error.is_none());
        let mut tampered = outcome.ledger.clone();
        tampered.config.rng_seed = 4321;
        let err = replay(&tampered, &ScoreTask, &spec).unwrap_err();
        match err {
            Error::ReplayMismatch { location, .. } => {
                assert!(location.starts_with("rounds[0]"), "diverged at {location}");
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn history_flows_to_history_conditioned_proposers() {
        use std::sync::{Arc, Mutex};
        // Capture contexts through a subprocess-free custom spec is not
        // possible via ProposerSpec, so exercise run_round directly.
        #[derive(Clone)]
        struct Capturing(Arc<Mutex<Vec<ProposalContext>>>);
        impl Proposer for Capturing {
            fn id(&self) -> &str {
                "capturing"
            }
            fn propose(
                &mut self,
                context: &ProposalContext,
                _rng: &mut ChaCha8Rng,
            ) -> crate::error::Result<String> {
                self.0.lock().unwrap().push(context.clone());
                Ok("0.4".into())
            }
        }
        let config = LoopConfig::greedy(3, 5);
        let seed = ScoreTask.seed_artifact().unwrap();
        let mut state = LoopState::new(seed, MetricValue::new("score", 0.5).unwrap());
        let captured = Arc::new(Mutex::new(Vec::new()));
        let mut proposer = Capturing(captured.clone());
        let history = vec![HistoryEntry {
            summary: "prior".into(),
            score: MetricValue::new("score", 0.48).unwrap(),
        }];
        run_round(&mut state, &config, &mut proposer, &ScoreTask, Some(history.clone())).unwrap();
        let contexts = captured.lock().unwrap();
        assert!(contexts.iter().all(|c| c.history.as_deref() == Some(&history[..])));
        // Attempt feedback accumulates across retries.
        assert!(contexts[0].prior_attempt_feedback.is_none());
        assert!(contexts[1].prior_attempt_feedback.as_ref().unwrap().contains("rejected"));
    }
}
