//! Operator entry point: run optimizations, reproduce ablation tables,
//! calibrate temperatures, replay ledgers, and emit reports.
//!
//! Exit codes are a stable contract: 0 success, 1 replay mismatch,
//! 2 configuration or domain error, 3 barrier violation,
//! 4 infrastructure failure (evaluator, proposer, io).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::acceptance::calibrate_t0;
use crate::artifact::{hash_artifact, Artifact, FormatTag};
use crate::error::{Error, Result};
use crate::landscapes::{self, degeneracy_sweep, Landscape, LandscapeTask};
use crate::ledger::RunLedger;
use crate::orchestrator::{execute, replay, LoopConfig, RunOutcome, Strategy};
use crate::proposers::ProposerSpec;
use crate::ruleset::{AcceptanceMode, Dataset, RulesetTask};
use crate::task::{SubprocessTask, Task, DEFAULT_EVALUATOR_TIMEOUT_SECS};

pub const OUT_DIR_ENV_VAR: &str = "PROPOSA_OUT_DIR";

/// Task descriptor in a run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// YAML rule classifier over a CSV dataset.
    Ruleset {
        dataset_csv: PathBuf,
        label_column: String,
        seed_rules: PathBuf,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
        #[serde(default = "default_split_seed")]
        split_seed: u64,
        /// When set, acceptance scores come from k-fold cross validation
        /// over the training split instead of the validation split.
        #[serde(default)]
        cv_folds: Option<usize>,
    },
    /// Synthetic one-dimensional landscape.
    Landscape { landscape: Landscape, start_x: f64 },
    /// External evaluator subprocess speaking the JSON wire protocol.
    External {
        #[serde(default = "default_external_id")]
        id: String,
        command: Vec<String>,
        #[serde(default = "default_evaluator_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        split_spec: serde_json::Value,
        seed_format: FormatTag,
        seed_body: Option<String>,
        seed_path: Option<PathBuf>,
        #[serde(default = "default_primary_metric")]
        primary_metric: String,
    },
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

fn default_split_seed() -> u64 {
    42
}

fn default_external_id() -> String {
    "external".into()
}

fn default_evaluator_timeout() -> u64 {
    DEFAULT_EVALUATOR_TIMEOUT_SECS
}

fn default_primary_metric() -> String {
    "score".into()
}

impl TaskSpec {
    pub fn build(&self) -> Result<Box<dyn Task>> {
        match self {
            TaskSpec::Ruleset { dataset_csv, label_column, seed_rules, fractions, split_seed, cv_folds } => {
                let dataset = Dataset::from_csv_path(dataset_csv, label_column)?;
                let seed_yaml = std::fs::read_to_string(seed_rules).map_err(|e| {
                    Error::Config(format!("reading seed rules {}: {e}", seed_rules.display()))
                })?;
                let acceptance = match cv_folds {
                    Some(k) => AcceptanceMode::CrossValidation { k: *k },
                    None => AcceptanceMode::ValidationSplit,
                };
                Ok(Box::new(RulesetTask::new(
                    "ruleset",
                    dataset,
                    *fractions,
                    *split_seed,
                    acceptance,
                    seed_yaml,
                )?))
            }
            TaskSpec::Landscape { landscape, start_x } => {
                Ok(Box::new(LandscapeTask::new(landscape.clone(), *start_x)?))
            }
            TaskSpec::External {
                id,
                command,
                timeout_secs,
                split_spec,
                seed_format,
                seed_body,
                seed_path,
                primary_metric,
            } => {
                let body = match (seed_body, seed_path) {
                    (Some(body), None) => body.clone(),
                    (None, Some(path)) => std::fs::read_to_string(path).map_err(|e| {
                        Error::Config(format!("reading seed artifact {}: {e}", path.display()))
                    })?,
                    _ => {
                        return Err(Error::Config(
                            "external task needs exactly one of seed_body or seed_path".into(),
                        ))
                    }
                };
                let seed = Artifact::new(*seed_format, body.trim())?;
                Ok(Box::new(SubprocessTask::new(
                    id.clone(),
                    command.clone(),
                    Duration::from_secs(*timeout_secs),
                    split_spec.clone(),
                    seed,
                    primary_metric.clone(),
                )?))
            }
        }
    }
}

/// A run configuration file: the loop parameters plus task and proposer
/// descriptors, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    #[serde(flatten)]
    pub loop_config: LoopConfig,
    pub task: TaskSpec,
    pub proposer: ProposerSpec,
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading config {}: {e}", path.display())))?;
        let spec: RunSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("parsing config {}: {e}", path.display())))?;
        spec.loop_config.validate()?;
        Ok(spec)
    }
}

#[derive(Parser, Debug)]
#[command(name = "proposa", version, about = "Propose-evaluate-accept optimization loops")]
pub struct Cli {
    /// Output directory for ledgers and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Execute one optimization run and write its ledger.
    Run(RunArgs),
    /// Run strategy variants n times each and tabulate the results.
    Ablate(AblateArgs),
    /// Compute the T0 at which a reference regression is accepted with a
    /// target probability.
    Calibrate(CalibrateArgs),
    /// Summarize one or more ledgers as markdown plus convergence CSV.
    Report(ReportArgs),
    /// Re-execute a ledger and verify it reproduces byte for byte.
    Replay(ReplayArgs),
    /// Run the synthetic-landscape experiments and emit their tables.
    Lab(LabArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's rng_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Strategy variants, comma separated (greedy, sa, parallel).
    #[arg(long, value_delimiter = ',', default_value = "greedy,sa,parallel")]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub n_runs: u32,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Reference regression magnitude (positive).
    #[arg(long)]
    pub delta: f64,
    /// Target acceptance probability in (0,1).
    #[arg(long)]
    pub target_p: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Ledger files to summarize.
    #[arg(required = true)]
    pub ledgers: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// The ledger to verify.
    pub ledger: PathBuf,
    /// The run configuration the ledger was produced with.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct LabArgs {
    /// Trials per (width, strategy) cell; defaults to the frozen 1000.
    #[arg(long, default_value_t = landscapes::lab::TRIALS)]
    pub trials: usize,
}

/// Maps an error to the documented exit code.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::Domain(_) | Error::InvalidArtifact(_) | Error::Dataset(_)
        | Error::Stratification(_) | Error::Protocol(_) | Error::Evaluation(_) | Error::Json(_) => 2,
        Error::Barrier(_) => 3,
        Error::Proposer(_) | Error::Evaluator(_) | Error::Io(_) => 4,
        Error::ReplayMismatch { .. } => 1,
    }
}

pub fn resolve_out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var(OUT_DIR_ENV_VAR).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("proposa-out"))
}

/// Sortable, collision-resistant run identifier: UTC timestamp plus a
/// short hash of the config document.
fn run_id(spec: &RunSpec) -> Result<String> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let config_json = serde_json::to_string(spec)?;
    let hash = hash_artifact(&config_json)?;
    Ok(format!("{stamp}-{:08x}", (hash >> 32) as u32 ^ hash as u32))
}

/// Atomic file write: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn final_validation_score(outcome: &RunOutcome) -> Option<f64> {
    outcome.final_state.as_ref().map(|s| s.incumbent_score.value())
}

fn test_score(ledger: &RunLedger, metric: &str) -> Option<f64> {
    ledger.final_report().and_then(|r| r.metric(metric)).map(|m| m.value())
}

/// Outcome summary of one `run` invocation.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub ledger_path: PathBuf,
    pub rounds: usize,
    pub evaluations: usize,
    pub validation_score: Option<f64>,
    pub test_score: Option<f64>,
    pub error: Option<String>,
}

pub fn cmd_run(spec: &RunSpec, out_dir: &Path) -> Result<RunSummary> {
    let task = spec.task.build()?;
    let outcome = execute(&spec.loop_config, task.as_ref(), &spec.proposer)?;
    let id = run_id(spec)?;
    let ledger_path = out_dir.join(format!("{id}.ledger.json"));
    write_atomic(&ledger_path, &outcome.ledger.to_json()?)?;
    let summary = RunSummary {
        run_id: id,
        rounds: outcome.ledger.rounds().len(),
        evaluations: outcome.ledger.evaluation_count(),
        validation_score: final_validation_score(&outcome),
        test_score: test_score(&outcome.ledger, task.primary_metric()),
        ledger_path,
        error: outcome.error.as_ref().map(|e| e.to_string()),
    };
    match outcome.error {
        // The partial ledger is on disk; surface the failure.
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, Serialize)]
pub struct AblateRow {
    pub variant: String,
    pub runs: u32,
    pub failed_runs: u32,
    pub mean_score: Option<f64>,
    pub best_score: Option<f64>,
    pub mean_evaluations: Option<f64>,
    pub mean_rounds: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct AblateTable {
    pub rows: Vec<AblateRow>,
    pub ledger_paths: Vec<PathBuf>,
}

fn parse_variant(token: &str) -> Result<Strategy> {
    Strategy::parse(token)
}

struct AblateCell {
    variant: usize,
    score: Option<f64>,
    evaluations: usize,
    rounds: usize,
    failed: bool,
    ledger_path: Option<PathBuf>,
}

/// Runs each requested variant `n_runs` times with derived seeds (run r
/// uses `base_seed + r`, shared across variants so scripted round-1
/// proposals coincide), writes every ledger, and aggregates per-variant
/// mean/best acceptance-tier score, evaluations, and rounds.
pub fn cmd_ablate(spec: &RunSpec, args: &AblateArgs, out_dir: &Path) -> Result<AblateTable> {
    let variants: Vec<(String, Strategy)> = args
        .variants
        .iter()
        .map(|v| parse_variant(v).map(|s| (v.clone(), s)))
        .collect::<Result<_>>()?;
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    if args.n_runs < 1 {
        return Err(Error::Config("n_runs must be >= 1".into()));
    }

    // Validate every variant's derived config up front.
    let mut work: Vec<(usize, String, RunSpec)> = Vec::new();
    for (vi, (name, strategy)) in variants.iter().enumerate() {
        for r in 0..args.n_runs {
            let mut derived = spec.clone();
            derived.loop_config.strategy = *strategy;
            derived.loop_config.rng_seed = spec.loop_config.rng_seed.wrapping_add(r as u64);
            if *strategy != Strategy::Parallel {
                derived.loop_config.investigators = 1;
                derived.loop_config.directives = None;
            }
            derived.loop_config.validate().map_err(|e| {
                Error::Config(format!("variant {name:?} is not runnable with this config: {e}"))
            })?;
            work.push((vi, format!("{name}-r{r}"), derived));
        }
    }

    let next = AtomicUsize::new(0);
    let cells: Mutex<Vec<AblateCell>> = Mutex::new(Vec::new());
    let jobs = args.jobs.max(1);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(work.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((vi, label, derived)) = work.get(i) else { break };
                let cell = match run_ablate_cell(derived, label, out_dir) {
                    Ok(cell) => AblateCell { variant: *vi, ..cell },
                    Err(e) => {
                        eprintln!("run {label} failed: {e}");
                        AblateCell {
                            variant: *vi,
                            score: None,
                            evaluations: 0,
                            rounds: 0,
                            failed: true,
                            ledger_path: None,
                        }
                    }
                };
                cells.lock().expect("ablate mutex").push(cell);
            });
        }
    });

    let cells = cells.into_inner().expect("ablate mutex");
    let mut rows = Vec::new();
    for (vi, (name, _)) in variants.iter().enumerate() {
        let mine: Vec<&AblateCell> = cells.iter().filter(|c| c.variant == vi).collect();
        let ok: Vec<&&AblateCell> = mine.iter().filter(|c| !c.failed).collect();
        let failed_runs = (mine.len() - ok.len()) as u32;
        let mean = |f: &dyn Fn(&AblateCell) -> f64| -> Option<f64> {
            if ok.is_empty() {
                None
            } else {
                Some(ok.iter().map(|c| f(c)).sum::<f64>() / ok.len() as f64)
            }
        };
        rows.push(AblateRow {
            variant: name.clone(),
            runs: mine.len() as u32,
            failed_runs,
            mean_score: mean(&|c| c.score.unwrap_or(f64::NAN)),
            best_score: ok
                .iter()
                .filter_map(|c| c.score)
                .max_by(|a, b| a.partial_cmp(b).expect("scores are finite")),
            mean_evaluations: mean(&|c| c.evaluations as f64),
            mean_rounds: mean(&|c| c.rounds as f64),
        });
    }
    let ledger_paths = cells.iter().filter_map(|c| c.ledger_path.clone()).collect();
    Ok(AblateTable { rows, ledger_paths })
}

fn run_ablate_cell(spec: &RunSpec, label: &str, out_dir: &Path) -> Result<AblateCell> {
    let task = spec.task.build()?;
    let outcome = execute(&spec.loop_config, task.as_ref(), &spec.proposer)?;
    let ledger_path = out_dir.join(format!("{}-{label}.ledger.json", run_id(spec)?));
    write_atomic(&ledger_path, &outcome.ledger.to_json()?)?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    Ok(AblateCell {
        variant: usize::MAX, // caller overwrites
        score: final_validation_score(&outcome),
        evaluations: outcome.ledger.evaluation_count(),
        rounds: outcome.ledger.rounds().len(),
        failed: false,
        ledger_path: Some(ledger_path),
    })
}

pub fn ablate_markdown(table: &AblateTable) -> String {
    let mut out = String::from(
        "| variant | runs | failed | mean score | best score | mean evals | mean rounds |\n|---|---|---|---|---|---|---|\n",
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    for row in &table.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            row.variant,
            row.runs,
            row.failed_runs,
            fmt(row.mean_score),
            fmt(row.best_score),
            fmt(row.mean_evaluations),
            fmt(row.mean_rounds),
        ));
    }
    out
}

pub fn ablate_csv(table: &AblateTable) -> String {
    let mut out =
        String::from("variant,runs,failed,mean_score,best_score,mean_evaluations,mean_rounds\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.variant,
            row.runs,
            row.failed_runs,
            fmt(row.mean_score),
            fmt(row.best_score),
            fmt(row.mean_evaluations),
            fmt(row.mean_rounds),
        ));
    }
    out
}

/// Formats `value` to `sig` significant figures.
fn significant_figures(value: f64, sig: i32) -> String {
    if value == 0.0 {
        return "0".into();
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (sig - 1 - magnitude).max(0);
    format!("{value:.*}", decimals as usize)
}

pub struct Calibration {
    pub t0: f64,
    pub human: String,
}

pub fn cmd_calibrate(delta: f64, target_p: f64) -> Result<Calibration> {
    let t0 = calibrate_t0(delta, target_p)?;
    Ok(Calibration { t0, human: format!("T0 = {}", significant_figures(t0, 4)) })
}

/// Per-ledger report data.
#[derive(Debug, Serialize)]
pub struct LedgerSummary {
    pub path: PathBuf,
    pub rounds: usize,
    pub attempts: usize,
    pub evaluations: usize,
    pub accepted_rounds: usize,
    pub final_accepted_score: Option<f64>,
    pub test_score: Option<f64>,
}

pub struct Report {
    pub markdown: String,
    pub convergence_csv: String,
    pub summaries: Vec<LedgerSummary>,
}

pub fn cmd_report(paths: &[PathBuf]) -> Result<Report> {
    let mut markdown = String::new();
    let mut csv = String::from("ledger,round,decision,attempts,temperature,round_best_score,incumbent_score\n");
    let mut summaries = Vec::new();
    for path in paths {
        let ledger = RunLedger::from_json(&std::fs::read_to_string(path)?)?;
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        markdown.push_str(&format!("## {name}\n\n"));
        markdown.push_str(&format!(
            "strategy: {}, seed: {}, task: {}, proposer: {}\n\n",
            ledger.config.strategy, ledger.config.rng_seed, ledger.config.task_id, ledger.config.proposer_id
        ));
        markdown.push_str("| round | attempts | decision | temperature | best score |\n|---|---|---|---|---|\n");
        let mut incumbent: Option<f64> = None;
        let mut accepted_rounds = 0;
        for round in ledger.rounds() {
            let best = round
                .attempts
                .iter()
                .filter_map(|a| a.score.as_ref().map(|s| s.value()))
                .max_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            if round.accepted_artifact_hash.is_some() {
                accepted_rounds += 1;
                // The accepted attempt is the last one recorded.
                incumbent = round.attempts.last().and_then(|a| a.score.as_ref()).map(|s| s.value());
            }
            let temp = round.temperature.map_or("-".to_string(), |t| format!("{t:.6}"));
            let best_text = best.map_or("-".to_string(), |b| format!("{b:.6}"));
            markdown.push_str(&format!(
                "| {} | {} | {:?} | {} | {} |\n",
                round.round_index,
                round.attempts.len(),
                round.decision,
                temp,
                best_text,
            ));
            csv.push_str(&format!(
                "{name},{},{:?},{},{},{},{}\n",
                round.round_index,
                round.decision,
                round.attempts.len(),
                round.temperature.map_or(String::new(), |t| t.to_string()),
                best.map_or(String::new(), |b| b.to_string()),
                incumbent.map_or(String::new(), |s| s.to_string()),
            ));
        }
        let test = ledger.final_report().and_then(|r| r.metrics().first()).map(|m| m.value());
        markdown.push_str(&format!(
            "\nfinal accepted score: {}; test score: {}\n\n",
            incumbent.map_or("-".to_string(), |s| format!("{s:.6}")),
            test.map_or("-".to_string(), |s| format!("{s:.6}")),
        ));
        summaries.push(LedgerSummary {
            path: path.clone(),
            rounds: ledger.rounds().len(),
            attempts: ledger.attempt_count(),
            evaluations: ledger.evaluation_count(),
            accepted_rounds,
            final_accepted_score: incumbent,
            test_score: test,
        });
    }

    // Cross-run aggregate.
    markdown.push_str("## aggregate\n\n");
    markdown.push_str("| ledgers | mean rounds | mean evaluations | mean test score |\n|---|---|---|---|\n");
    let n = summaries.len() as f64;
    let mean_rounds = summaries.iter().map(|s| s.rounds as f64).sum::<f64>() / n;
    let mean_evals = summaries.iter().map(|s| s.evaluations as f64).sum::<f64>() / n;
    let tested: Vec<f64> = summaries.iter().filter_map(|s| s.test_score).collect();
    let mean_test = if tested.is_empty() {
        "-".to_string()
    } else {
        format!("{:.6}", tested.iter().sum::<f64>() / tested.len() as f64)
    };
    markdown.push_str(&format!(
        "| {} | {mean_rounds:.2} | {mean_evals:.2} | {mean_test} |\n",
        summaries.len()
    ));

    Ok(Report { markdown, convergence_csv: csv, summaries })
}

pub enum ReplayVerdict {
    Identical,
    Mismatch { location: String, detail: String },
}

pub fn cmd_replay(ledger_path: &Path, spec: &RunSpec) -> Result<ReplayVerdict> {
    let ledger = RunLedger::from_json(&std::fs::read_to_string(ledger_path)?)?;
    let task = spec.task.build()?;
    match replay(&ledger, task.as_ref(), &spec.proposer) {
        Ok(_) => Ok(ReplayVerdict::Identical),
        Err(Error::ReplayMismatch { location, detail }) => {
            Ok(ReplayVerdict::Mismatch { location, detail })
        }
        Err(other) => Err(other),
    }
}

pub struct LabOutput {
    pub degeneracy_csv: String,
    pub trials_csv: String,
    pub summary_md: String,
}

/// Runs the frozen lab experiments: the acceptance-degeneracy sweep and
/// the narrow/broad basin-rate comparison.
pub fn cmd_lab(trials: usize) -> Result<LabOutput> {
    let schedule = landscapes::lab::reference_schedule();
    // epsilon/T0 = 0.1: the regime where the Boltzmann rule accepts
    // nearly everything.
    let epsilon = 0.03;
    let rows = degeneracy_sweep(epsilon, &schedule, landscapes::lab::ROUNDS, 100, landscapes::lab::MASTER_SEED)?;
    let mut degeneracy_csv = String::from("round,delta,temperature,accept_probability,bound\n");
    let mut violations = 0;
    for row in &rows {
        if row.accept_probability < row.bound {
            violations += 1;
        }
        degeneracy_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.round, row.delta, row.temperature, row.accept_probability, row.bound
        ));
    }

    let well = landscapes::lab::reference_well();
    let mut trials_csv = String::from("width,strategy,start_basin_rate,global_basin_rate\n");
    let mut rates = Vec::new();
    for width in [landscapes::lab::NARROW_WIDTH, landscapes::lab::BROAD_WIDTH] {
        let proposer = landscapes::SyntheticProposer::new(width)?;
        let greedy = landscapes::basin_rates(
            &well,
            &proposer,
            Strategy::Greedy,
            landscapes::lab::START_X,
            None,
            landscapes::lab::ROUNDS,
            trials,
            landscapes::lab::MASTER_SEED,
        )?;
        let sa = landscapes::basin_rates(
            &well,
            &proposer,
            Strategy::SimulatedAnnealing,
            landscapes::lab::START_X,
            Some(schedule),
            landscapes::lab::ROUNDS,
            trials,
            landscapes::lab::MASTER_SEED,
        )?;
        trials_csv.push_str(&format!(
            "{width},greedy,{},{}\n",
            greedy.start_basin_rate, greedy.global_basin_rate
        ));
        trials_csv.push_str(&format!("{width},sa,{},{}\n", sa.start_basin_rate, sa.global_basin_rate));
        rates.push((width, greedy, sa));
    }

    let mut summary_md = String::from("# landscape lab\n\n");
    summary_md.push_str(&format!(
        "degeneracy sweep: {} rows, epsilon = {epsilon}, bound violations = {violations}\n\n",
        rows.len()
    ));
    summary_md.push_str("| width | greedy start | greedy global | sa start | sa global | sa - greedy (global) |\n|---|---|---|---|---|---|\n");
    for (width, greedy, sa) in &rates {
        summary_md.push_str(&format!(
            "| {width} | {:.3} | {:.3} | {:.3} | {:.3} | {:+.3} |\n",
            greedy.start_basin_rate,
            greedy.global_basin_rate,
            sa.start_basin_rate,
            sa.global_basin_rate,
            sa.global_basin_rate - greedy.global_basin_rate,
        ));
    }
    Ok(LabOutput { degeneracy_csv, trials_csv, summary_md })
}

/// Top-level dispatch. Returns the process exit code.
pub fn main_entry(cli: Cli) -> i32 {
    let out_dir = resolve_out_dir(&cli.out);
    let result = dispatch(cli.command, &out_dir);
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out_dir: &Path) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let mut spec = RunSpec::load(&args.config)?;
            if let Some(seed) = args.seed {
                spec.loop_config.rng_seed = seed;
            }
            match cmd_run(&spec, out_dir) {
                Ok(summary) => {
                    println!(
                        "run {} finished: rounds {}, evaluations {}, validation {}, test {}",
                        summary.run_id,
                        summary.rounds,
                        summary.evaluations,
                        summary.validation_score.map_or("-".into(), |v| format!("{v:.6}")),
                        summary.test_score.map_or("-".into(), |v| format!("{v:.6}")),
                    );
                    println!("{}", serde_json::to_string(&summary)?);
                    Ok(0)
                }
                Err(e) => Err(e),
            }
        }
        Command::Ablate(args) => {
            let spec = RunSpec::load(&args.config)?;
            let table = cmd_ablate(&spec, &args, out_dir)?;
            print!("{}", ablate_markdown(&table));
            write_atomic(&out_dir.join("ablation.csv"), &ablate_csv(&table))?;
            write_atomic(&out_dir.join("ablation.md"), &ablate_markdown(&table))?;
            println!("wrote {}", out_dir.join("ablation.csv").display());
            Ok(0)
        }
        Command::Calibrate(args) => {
            let calibration = cmd_calibrate(args.delta, args.target_p)?;
            println!("{}", calibration.human);
            println!("{}", serde_json::json!({ "t0": calibration.t0 }));
            Ok(0)
        }
        Command::Report(args) => {
            let report = cmd_report(&args.ledgers)?;
            print!("{}", report.markdown);
            write_atomic(&out_dir.join("report.md"), &report.markdown)?;
            write_atomic(&out_dir.join("convergence.csv"), &report.convergence_csv)?;
            println!("wrote {}", out_dir.join("convergence.csv").display());
            Ok(0)
        }
        Command::Replay(args) => {
            let spec = RunSpec::load(&args.config)?;
            match cmd_replay(&args.ledger, &spec)? {
                ReplayVerdict::Identical => {
                    println!("replay ok: ledger reproduces byte for byte");
                    Ok(0)
                }
                ReplayVerdict::Mismatch { location, detail } => {
                    eprintln!("replay mismatch at {location}: {detail}");
                    Ok(1)
                }
            }
        }
        Command::Lab(args) => {
            let lab = cmd_lab(args.trials)?;
            print!("{}", lab.summary_md);
            write_atomic(&out_dir.join("degeneracy.csv"), &lab.degeneracy_csv)?;
            write_atomic(&out_dir.join("basin_trials.csv"), &lab.trials_csv)?;
            write_atomic(&out_dir.join("lab_summary.md"), &lab.summary_md)?;
            println!("wrote {}", out_dir.join("basin_trials.csv").display());
            Ok(0)
        }
    }
}
