//! Synthetic one-dimensional objectives and proposal distributions that
//! make the proposal-centric annealing analysis empirically testable with
//! brute-force oracles.
//!
//! One dimension is enough: basins, barriers, and escape are all visible,
//! and grid oracles stay exact.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::acceptance::{sa_accept_probability, temperature_at, TemperatureSchedule};
use crate::artifact::{Artifact, FormatTag};
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, MetricValue, VisibilityTier};
use crate::orchestrator::{execute, LoopConfig, Strategy};
use crate::proposers::ProposerSpec;
use crate::rng::{substream, substream_seed, unit_f64};
use crate::task::{ParseFailure, Task};

/// A synthetic objective (higher is better) over a closed interval.
///
/// The double well is the pointwise max of two concave parabolas:
///
/// ```text
/// f(x) = max(v1 - a1 (x - c1)^2,  v2 - a2 (x - c2)^2)
/// a1 = h / half^2,  a2 = (v2 - v1 + h) / half^2,  half = (c2 - c1) / 2
/// ```
///
/// which places local maxima of exactly `v1` at `c1` and `v2` at `c2`
/// (the global one), with the valley between them at `v1 - h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Landscape {
    QuadraticUnimodal { peak_x: f64, peak_value: f64, curvature: f64, domain: [f64; 2] },
    DoubleWell { c1: f64, c2: f64, v1: f64, v2: f64, barrier: f64, domain: [f64; 2] },
}

impl Landscape {
    pub fn quadratic(peak_x: f64, peak_value: f64, curvature: f64, domain: [f64; 2]) -> Result<Self> {
        if domain[0] >= domain[1] {
            return Err(Error::Domain("domain must satisfy lo < hi".into()));
        }
        if !(domain[0]..=domain[1]).contains(&peak_x) {
            return Err(Error::Domain("peak must lie inside the domain".into()));
        }
        if curvature < 0.0 {
            return Err(Error::Domain("curvature must be non-negative".into()));
        }
        Ok(Landscape::QuadraticUnimodal { peak_x, peak_value, curvature, domain })
    }

    /// Builds a double well and verifies by grid scan that it has exactly
    /// two strict interior local maxima.
    pub fn double_well(c1: f64, c2: f64, v1: f64, v2: f64, barrier: f64, domain: [f64; 2]) -> Result<Self> {
        if c1 >= c2 || c1.is_nan() || c2.is_nan() {
            return Err(Error::Domain("basin centers must satisfy c1 < c2".into()));
        }
        if v1 >= v2 || v1.is_nan() || v2.is_nan() {
            return Err(Error::Domain("basin values must satisfy v1 < v2 (global at c2)".into()));
        }
        if barrier <= 0.0 {
            return Err(Error::Domain("barrier height must be positive".into()));
        }
        if domain[0] > c1 || domain[1] < c2 {
            return Err(Error::Domain("domain must contain both basin centers".into()));
        }
        let landscape = Landscape::DoubleWell { c1, c2, v1, v2, barrier, domain };
        let maxima = landscape.count_interior_maxima(4096);
        if maxima != 2 {
            return Err(Error::Domain(format!(
                "double well construction produced {maxima} interior maxima, expected 2"
            )));
        }
        Ok(landscape)
    }

    pub fn domain(&self) -> [f64; 2] {
        match self {
            Landscape::QuadraticUnimodal { domain, .. } | Landscape::DoubleWell { domain, .. } => *domain,
        }
    }

    /// Basin centers, lowest first; the global optimum is the last.
    pub fn basin_centers(&self) -> Vec<f64> {
        match self {
            Landscape::QuadraticUnimodal { peak_x, .. } => vec![*peak_x],
            Landscape::DoubleWell { c1, c2, .. } => vec![*c1, *c2],
        }
    }

    /// Index of the basin whose center is nearest to `x` (ties toward
    /// the lower index).
    pub fn basin_of(&self, x: f64) -> usize {
        let centers = self.basin_centers();
        let mut best = 0;
        for (i, c) in centers.iter().enumerate() {
            if (x - c).abs() < (x - centers[best]).abs() {
                best = i;
            }
        }
        best
    }

    fn value_unchecked(&self, x: f64) -> f64 {
        match self {
            Landscape::QuadraticUnimodal { peak_x, peak_value, curvature, .. } => {
                peak_value - curvature * (x - peak_x) * (x - peak_x)
            }
            Landscape::DoubleWell { c1, c2, v1, v2, barrier, .. } => {
                let half = (c2 - c1) / 2.0;
                let a1 = barrier / (half * half);
                let a2 = (v2 - v1 + barrier) / (half * half);
                let bump1 = v1 - a1 * (x - c1) * (x - c1);
                let bump2 = v2 - a2 * (x - c2) * (x - c2);
                bump1.max(bump2)
            }
        }
    }

    fn count_interior_maxima(&self, grid_n: usize) -> usize {
        let [lo, hi] = self.domain();
        let step = (hi - lo) / (grid_n - 1) as f64;
        let mut count = 0;
        for i in 1..grid_n - 1 {
            let x = lo + step * i as f64;
            let (prev, here, next) =
                (self.value_unchecked(x - step), self.value_unchecked(x), self.value_unchecked(x + step));
            if here > prev && here > next {
                count += 1;
            }
        }
        count
    }
}

/// Objective value at `x`; `x` must lie inside the domain.
pub fn eval_landscape(landscape: &Landscape, x: f64) -> Result<f64> {
    let [lo, hi] = landscape.domain();
    if !x.is_finite() || x < lo || x > hi {
        return Err(Error::Domain(format!("x = {x} outside domain [{lo}, {hi}]")));
    }
    Ok(landscape.value_unchecked(x))
}

/// Oracle: argmax over a uniform grid of `grid_n` points (endpoints
/// included); ties go to the smallest x.
pub fn brute_force_optimum(landscape: &Landscape, grid_n: usize) -> Result<(f64, f64)> {
    if grid_n < 2 {
        return Err(Error::Domain("grid_n must be at least 2".into()));
    }
    let [lo, hi] = landscape.domain();
    let step = (hi - lo) / (grid_n - 1) as f64;
    let mut best_x = lo;
    let mut best_value = landscape.value_unchecked(lo);
    for i in 1..grid_n {
        let x = lo + step * i as f64;
        let value = landscape.value_unchecked(x);
        if value > best_value {
            best_value = value;
            best_x = x;
        }
    }
    Ok((best_x, best_value))
}

/// The synthetic stand-in for a proposer's effective support: a Gaussian
/// step of width `support_width` around the incumbent point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProposer {
    pub support_width: f64,
}

impl SyntheticProposer {
    pub fn new(support_width: f64) -> Result<Self> {
        if !(support_width.is_finite() && support_width > 0.0) {
            return Err(Error::Domain(format!("support width must be positive, got {support_width}")));
        }
        Ok(Self { support_width })
    }

    /// The proposer spec a trial plugs into the loop: one numeric key
    /// `x`, Gaussian step of the support width, clamped to the domain.
    pub fn spec(&self, landscape: &Landscape) -> ProposerSpec {
        let [lo, hi] = landscape.domain();
        ProposerSpec::RandomPerturb {
            steps: BTreeMap::from([("x".to_string(), self.support_width)]),
            bounds: BTreeMap::from([("x".to_string(), [lo, hi])]),
            integer_keys: BTreeSet::new(),
        }
    }
}

/// A landscape wrapped as a task: artifacts are `{"x": <value>}` numeric
/// configs, every tier scores the same objective.
#[derive(Debug, Clone)]
pub struct LandscapeTask {
    landscape: Landscape,
    start_x: f64,
}

impl LandscapeTask {
    pub fn new(landscape: Landscape, start_x: f64) -> Result<Self> {
        eval_landscape(&landscape, start_x)?;
        Ok(Self { landscape, start_x })
    }

    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    fn x_of(&self, artifact: &Artifact) -> Result<f64> {
        let config: BTreeMap<String, f64> = serde_json::from_str(artifact.body())
            .map_err(|e| Error::Evaluator(format!("artifact is not a numeric config: {e}")))?;
        config
            .get("x")
            .copied()
            .ok_or_else(|| Error::Evaluator("artifact lacks the key \"x\"".into()))
    }

    fn body_for(x: f64) -> Result<String> {
        Ok(serde_json::to_string(&BTreeMap::from([("x".to_string(), x)]))?)
    }
}

impl Task for LandscapeTask {
    fn id(&self) -> &str {
        "landscape"
    }

    fn primary_metric(&self) -> &str {
        "objective"
    }

    fn seed_artifact(&self) -> Result<Artifact> {
        Artifact::new(FormatTag::NumericConfig, Self::body_for(self.start_x)?)
    }

    fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure> {
        let body = raw.trim();
        let config: BTreeMap<String, f64> = serde_json::from_str(body).map_err(|e| ParseFailure {
            raw_output: raw.to_string(),
            error: format!("not a numeric config: {e}"),
        })?;
        let Some(x) = config.get("x") else {
            return Err(ParseFailure { raw_output: raw.to_string(), error: "missing key \"x\"".into() });
        };
        let [lo, hi] = self.landscape.domain();
        if !x.is_finite() || *x < lo || *x > hi {
            return Err(ParseFailure {
                raw_output: raw.to_string(),
                error: format!("x = {x} outside domain [{lo}, {hi}]"),
            });
        }
        Artifact::new(FormatTag::NumericConfig, body)
            .map_err(|e| ParseFailure { raw_output: raw.to_string(), error: e.to_string() })
    }

    fn evaluate(&self, artifact: &Artifact, tier: VisibilityTier) -> Result<EvaluationReport> {
        let x = self.x_of(artifact)?;
        let value = eval_landscape(&self.landscape, x)?;
        Ok(EvaluationReport::new(
            tier,
            vec![MetricValue::new("objective", value)?],
            format!("x = {x}, objective = {value}"),
            artifact.content_hash(),
        ))
    }
}

/// Outcome of one optimization trial on a landscape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub final_x: f64,
    pub final_value: f64,
    /// Index into [`Landscape::basin_centers`] of the nearest center.
    pub basin: usize,
}

/// Runs the optimization loop on the landscape with the synthetic
/// proposer and reports where it ended up.
///
/// Trials are fixed-budget: one attempt per round and skip-based early
/// stopping disabled (`skip_limit = rounds`), matching the classical
/// one-proposal-per-step setup the analysis reasons about.
pub fn run_strategy_trial(
    landscape: &Landscape,
    proposer: &SyntheticProposer,
    strategy: Strategy,
    start_x: f64,
    schedule: Option<TemperatureSchedule>,
    rounds: u32,
    seed: u64,
) -> Result<TrialResult> {
    if strategy == Strategy::Parallel {
        return Err(Error::Config("landscape trials cover greedy and simulated annealing".into()));
    }
    let task = LandscapeTask::new(landscape.clone(), start_x)?;
    let config = LoopConfig {
        strategy,
        attempt_limit: 1,
        skip_limit: rounds.max(1),
        round_budget: rounds.max(1),
        schedule,
        investigators: 1,
        directives: None,
        rng_seed: seed,
    };
    let outcome = execute(&config, &task, &proposer.spec(landscape))?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    let state = outcome.final_state.expect("completed run has a final state");
    let final_x = task.x_of(&state.incumbent)?;
    Ok(TrialResult {
        final_x,
        final_value: state.incumbent_score.value(),
        basin: landscape.basin_of(final_x),
    })
}

/// Paired Monte-Carlo basin statistics for one (landscape, width,
/// strategy) setting: how often trials end in the basin of `start_x` and
/// how often in the global basin. Trial `t` runs with the documented
/// derived seed, so two strategies called with the same master seed see
/// identical seed streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinRates {
    pub trials: usize,
    pub start_basin_rate: f64,
    pub global_basin_rate: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn basin_rates(
    landscape: &Landscape,
    proposer: &SyntheticProposer,
    strategy: Strategy,
    start_x: f64,
    schedule: Option<TemperatureSchedule>,
    rounds: u32,
    trials: usize,
    master_seed: u64,
) -> Result<BasinRates> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let start_basin = landscape.basin_of(start_x);
    let global_basin = landscape.basin_centers().len() - 1;
    let mut start_count = 0usize;
    let mut global_count = 0usize;
    for trial in 0..trials {
        let seed = substream_seed(master_seed, trial as u32, 0);
        let result = run_strategy_trial(landscape, proposer, strategy, start_x, schedule, rounds, seed)?;
        if result.basin == start_basin {
            start_count += 1;
        }
        if result.basin == global_basin {
            global_count += 1;
        }
    }
    Ok(BasinRates {
        trials,
        start_basin_rate: start_count as f64 / trials as f64,
        global_basin_rate: global_count as f64 / trials as f64,
    })
}

/// One row of the acceptance-degeneracy table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegeneracyRow {
    pub round: u32,
    pub delta: f64,
    pub temperature: f64,
    pub accept_probability: f64,
    /// The analytic lower bound `exp(-epsilon / temperature)`.
    pub bound: f64,
}

/// Samples score changes with `|delta| <= epsilon` across the cooling
/// schedule and tabulates acceptance probabilities against the analytic
/// lower bound. Every row satisfies `accept_probability >= bound`.
pub fn degeneracy_sweep(
    epsilon: f64,
    schedule: &TemperatureSchedule,
    rounds: u32,
    samples_per_round: usize,
    seed: u64,
) -> Result<Vec<DegeneracyRow>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if rounds < 1 || samples_per_round < 1 {
        return Err(Error::Domain("need at least one round and one sample".into()));
    }
    let mut rows = Vec::with_capacity(rounds as usize * samples_per_round);
    for round in 1..=rounds {
        let temperature = temperature_at(schedule, round)?;
        let bound = (-epsilon / temperature).exp();
        let mut rng = substream(seed, round, 0);
        for _ in 0..samples_per_round {
            let delta = (2.0 * unit_f64(&mut rng) - 1.0) * epsilon;
            let accept_probability = sa_accept_probability(delta, temperature)?;
            rows.push(DegeneracyRow { round, delta, temperature, accept_probability, bound });
        }
    }
    Ok(rows)
}

/// The frozen reference experiment behind the lab CLI and the acceptance
/// suite. Parameters and thresholds were fixed from a committed oracle
/// run (see `tests/fixtures/landscape_oracle.md` in the repository) and
/// are not tuned afterwards.
pub mod lab {
    use super::*;

    pub const TRIALS: usize = 1000;
    pub const ROUNDS: u32 = 10;
    pub const MASTER_SEED: u64 = 20260808;
    pub const START_X: f64 = -1.0;
    /// Basin separation |c2 - c1| of the reference well.
    pub const BASIN_SEPARATION: f64 = 2.0;
    /// Narrow effective support: 0.05 x basin separation.
    pub const NARROW_WIDTH: f64 = 0.1;
    /// Broad effective support: equal to the basin separation.
    pub const BROAD_WIDTH: f64 = 2.0;
    /// Frozen margin for the broad-support comparison: SA's global-basin
    /// rate must exceed greedy's by at least this much (oracle run
    /// observed +0.085).
    pub const BROAD_SA_MARGIN: f64 = 0.03;

    /// The reference double well: local peak 0.9 at -1, global peak 1.0
    /// at +1, valley 2.0 below the local peak.
    pub fn reference_well() -> Landscape {
        Landscape::double_well(-1.0, 1.0, 0.9, 1.0, 2.0, [-3.0, 3.0])
            .expect("reference well parameters are valid")
    }

    /// The reference cooling schedule for lab trials.
    pub fn reference_schedule() -> TemperatureSchedule {
        TemperatureSchedule::new(0.3, 0.7).expect("reference schedule parameters are valid")
    }

    /// Paired narrow/broad basin statistics at the frozen parameters.
    pub fn reference_rates(width: f64) -> Result<(BasinRates, BasinRates)> {
        let well = reference_well();
        let proposer = SyntheticProposer::new(width)?;
        let greedy = basin_rates(&well, &proposer, Strategy::Greedy, START_X, None, ROUNDS, TRIALS, MASTER_SEED)?;
        let sa = basin_rates(
            &well,
            &proposer,
            Strategy::SimulatedAnnealing,
            START_X,
            Some(reference_schedule()),
            ROUNDS,
            TRIALS,
            MASTER_SEED,
        )?;
        Ok((greedy, sa))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well() -> Landscape {
        Landscape::double_well(-1.0, 1.0, 0.5, 1.0, 0.3, [-3.0, 3.0]).unwrap()
    }

    #[test]
    fn quadratic_symmetry_and_peak() {
        let l = Landscape::quadratic(0.0, 2.0, 1.0, [-4.0, 4.0]).unwrap();
        assert_eq!(eval_landscape(&l, 0.0).unwrap(), 2.0);
        assert_eq!(eval_landscape(&l, 1.5).unwrap(), eval_landscape(&l, -1.5).unwrap());
        assert!(eval_landscape(&l, 0.0).unwrap() > eval_landscape(&l, 0.1).unwrap());
        assert!(eval_landscape(&l, 4.5).is_err());
    }

    #[test]
    fn double_well_shape() {
        let l = well();
        let at = |x| eval_landscape(&l, x).unwrap();
        assert!((at(-1.0) - 0.5).abs() < 1e-12);
        assert!((at(1.0) - 1.0).abs() < 1e-12);
        assert!(at(1.0) > at(-1.0));
        // Valley between the bumps sits at v1 - h.
        assert!((at(0.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn double_well_construction_rejects_bad_params() {
        assert!(Landscape::double_well(1.0, -1.0, 0.5, 1.0, 0.3, [-3.0, 3.0]).is_err());
        assert!(Landscape::double_well(-1.0, 1.0, 1.0, 0.5, 0.3, [-3.0, 3.0]).is_err());
        assert!(Landscape::double_well(-1.0, 1.0, 0.5, 1.0, -0.3, [-3.0, 3.0]).is_err());
        assert!(Landscape::double_well(-1.0, 1.0, 0.5, 1.0, 0.3, [0.0, 3.0]).is_err());
    }

    #[test]
    fn grid_oracle_finds_the_global_basin() {
        let (x_star, v_star) = brute_force_optimum(&well(), 100_000).unwrap();
        assert!((x_star - 1.0).abs() < 1e-4, "x* = {x_star}");
        assert!((v_star - 1.0).abs() < 1e-8);

        let q = Landscape::quadratic(0.3, 1.0, 2.0, [-2.0, 2.0]).unwrap();
        let (x_star, _) = brute_force_optimum(&q, 1_000_000).unwrap();
        assert!((x_star - 0.3).abs() < 1e-5, "x* = {x_star}");
    }

    #[test]
    fn constant_landscape_tie_goes_to_lo() {
        let flat = Landscape::quadratic(0.0, 1.0, 0.0, [-2.0, 2.0]).unwrap();
        let (x_star, v_star) = brute_force_optimum(&flat, 1001).unwrap();
        assert_eq!(x_star, -2.0);
        assert_eq!(v_star, 1.0);
    }

    #[test]
    fn basin_membership_by_nearest_center() {
        let l = well();
        assert_eq!(l.basin_of(-2.5), 0);
        assert_eq!(l.basin_of(-0.1), 0);
        assert_eq!(l.basin_of(0.1), 1);
        assert_eq!(l.basin_of(2.9), 1);
    }

    #[test]
    fn unimodal_trials_reach_the_peak_under_both_strategies() {
        let l = Landscape::quadratic(0.3, 1.0, 1.0, [-2.0, 2.0]).unwrap();
        let proposer = SyntheticProposer::new(0.2).unwrap();
        let schedule = TemperatureSchedule::new(0.05, 0.9).unwrap();
        let (oracle_x, oracle_v) = brute_force_optimum(&l, 100_000).unwrap();
        for (strategy, schedule) in
            [(Strategy::Greedy, None), (Strategy::SimulatedAnnealing, Some(schedule))]
        {
            let result =
                run_strategy_trial(&l, &proposer, strategy, -1.5, schedule, 50, 77).unwrap();
            assert!(
                (result.final_value - oracle_v).abs() < 0.05,
                "{strategy:?}: {} vs oracle {oracle_v} (x* {oracle_x})",
                result.final_value
            );
            assert_eq!(result.basin, 0);
        }
    }

    #[test]
    fn vanishing_width_pins_trials_to_the_start_basin_optimum() {
        let l = well();
        let proposer = SyntheticProposer::new(1e-6).unwrap();
        let schedule = Some(TemperatureSchedule::new(0.3, 0.9).unwrap());
        for (strategy, schedule) in [(Strategy::Greedy, None), (Strategy::SimulatedAnnealing, schedule)] {
            let result = run_strategy_trial(&l, &proposer, strategy, -1.0, schedule, 40, 3).unwrap();
            assert!((result.final_x - -1.0).abs() < 1e-3, "{strategy:?} drifted to {}", result.final_x);
            assert_eq!(result.basin, 0);
        }
    }

    #[test]
    fn trajectories_stay_within_landscape_range() {
        let l = well();
        let (_, max) = brute_force_optimum(&l, 100_000).unwrap();
        let min = {
            // Grid min for the range check.
            let [lo, hi] = l.domain();
            let mut min = f64::INFINITY;
            for i in 0..10_000 {
                let x = lo + (hi - lo) * i as f64 / 9_999.0;
                min = min.min(eval_landscape(&l, x).unwrap());
            }
            min
        };
        let proposer = SyntheticProposer::new(0.5).unwrap();
        let in_range = |v: f64| v >= min - 1e-12 && v <= max + 1e-12;
        for seed in 0..10 {
            let r = run_strategy_trial(&l, &proposer, Strategy::Greedy, -1.0, None, 20, seed).unwrap();
            assert!(in_range(r.final_value));
            // Audit the whole trajectory through a full loop run: every
            // evaluated attempt is a landscape value.
            let task = LandscapeTask::new(l.clone(), -1.0).unwrap();
            let config = LoopConfig {
                attempt_limit: 1,
                skip_limit: 20,
                ..crate::orchestrator::LoopConfig::greedy(20, seed)
            };
            let outcome = execute(&config, &task, &proposer.spec(&l)).unwrap();
            assert!(outcome.error.is_none());
            for round in outcome.ledger.rounds() {
                for attempt in &round.attempts {
                    if let Some(score) = &attempt.score {
                        assert!(in_range(score.value()), "trajectory left the range: {score:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn degeneracy_rows_respect_the_bound() {
        let schedule = TemperatureSchedule::new(1.0, 0.9).unwrap();
        let rows = degeneracy_sweep(0.1, &schedule, 10, 100, 5).unwrap();
        assert_eq!(rows.len(), 1000);
        for row in &rows {
            assert!(row.delta.abs() <= 0.1);
            assert!(row.accept_probability >= row.bound, "{row:?}");
            assert!((row.bound - (-0.1 / row.temperature).exp()).abs() < 1e-15);
        }
        // At epsilon/T = 0.1 every probability clears exp(-0.1).
        let first_round: Vec<_> = rows.iter().filter(|r| r.round == 1).collect();
        assert!(first_round.iter().all(|r| r.accept_probability >= 0.9048374180359595));
    }

    #[test]
    fn basin_rates_are_reproducible() {
        let l = well();
        let proposer = SyntheticProposer::new(0.1).unwrap();
        let a = basin_rates(&l, &proposer, Strategy::Greedy, -1.0, None, 10, 50, 42).unwrap();
        let b = basin_rates(&l, &proposer, Strategy::Greedy, -1.0, None, 10, 50, 42).unwrap();
        assert_eq!(a, b);
    }
}
