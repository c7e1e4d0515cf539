//! Acceptance rules: greedy, Boltzmann (simulated annealing), and
//! best-of-K selection, plus the geometric temperature schedule and its
//! calibration.
//!
//! Every function here is pure. RNG draws are injected, never sampled
//! internally, so each decision is replayable from the ledger.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricValue;

/// Geometric cooling: temperature at round k is `t0 * gamma^(k-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    t0: f64,
    gamma: f64,
}

impl TemperatureSchedule {
    pub fn new(t0: f64, gamma: f64) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::Domain(format!("t0 must be positive, got {t0}")));
        }
        if !(gamma.is_finite() && gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!("gamma must be in (0,1], got {gamma}")));
        }
        Ok(Self { t0, gamma })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// The outcome of one acceptance decision.
///
/// `rng_draw` is present exactly when the decision was stochastic, i.e. a
/// simulated-annealing decision over a regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accepted: bool,
    pub accept_probability: f64,
    pub rng_draw: Option<f64>,
}

fn check_comparable(current: &MetricValue, candidate: &MetricValue) -> Result<()> {
    if current.name() != candidate.name() {
        return Err(Error::Config(format!(
            "cannot compare metrics {:?} and {:?}",
            current.name(),
            candidate.name()
        )));
    }
    Ok(())
}

fn round_to_decimals(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * scale).round() / scale
}

/// Greedy acceptance: accept iff the candidate strictly improves.
///
/// Comparison is exact by default. `precision_decimals`, when set, rounds
/// both values first; ties after rounding are rejections.
pub fn greedy_decide_with_precision(
    current: &MetricValue,
    candidate: &MetricValue,
    precision_decimals: Option<u32>,
) -> Result<Decision> {
    check_comparable(current, candidate)?;
    let (cur, cand) = match precision_decimals {
        Some(d) => (round_to_decimals(current.value(), d), round_to_decimals(candidate.value(), d)),
        None => (current.value(), candidate.value()),
    };
    let accepted = cand > cur;
    Ok(Decision {
        accepted,
        accept_probability: if accepted { 1.0 } else { 0.0 },
        rng_draw: None,
    })
}

/// Greedy acceptance with exact comparison (the default rule).
pub fn greedy_decide(current: &MetricValue, candidate: &MetricValue) -> Result<Decision> {
    greedy_decide_with_precision(current, candidate, None)
}

/// Boltzmann acceptance probability for a score change of `delta` at the
/// given temperature: 1 for improvements, `exp(delta / temperature)` for
/// regressions, clamped to [0,1].
///
/// Defining the non-negative branch before exponentiation avoids overflow
/// at tiny temperatures.
pub fn sa_accept_probability(delta: f64, temperature: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(Error::Domain(format!("delta must be finite, got {delta}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if delta >= 0.0 {
        return Ok(1.0);
    }
    Ok((delta / temperature).exp().clamp(0.0, 1.0))
}

/// Simulated-annealing acceptance: accept iff `draw` falls below the
/// Boltzmann probability. The draw comes from the run's seeded stream.
pub fn sa_decide(
    current: &MetricValue,
    candidate: &MetricValue,
    temperature: f64,
    draw: f64,
) -> Result<Decision> {
    check_comparable(current, candidate)?;
    if !(0.0..1.0).contains(&draw) {
        return Err(Error::Domain(format!("rng draw must be in [0,1), got {draw}")));
    }
    let delta = candidate.value() - current.value();
    let probability = sa_accept_probability(delta, temperature)?;
    if delta >= 0.0 {
        // Deterministic accept; the draw was not consulted.
        return Ok(Decision { accepted: true, accept_probability: 1.0, rng_draw: None });
    }
    Ok(Decision { accepted: draw < probability, accept_probability: probability, rng_draw: Some(draw) })
}

/// Temperature at round `round_k` (1-based): `t0 * gamma^(k-1)`.
///
/// Computed by iterated multiplication rather than `powi`: plain IEEE
/// multiplies are bit-identical across binaries and platforms, which
/// ledger replay depends on.
pub fn temperature_at(schedule: &TemperatureSchedule, round_k: u32) -> Result<f64> {
    if round_k < 1 {
        return Err(Error::Domain("round index must be >= 1".into()));
    }
    let mut temperature = schedule.t0;
    for _ in 1..round_k {
        temperature *= schedule.gamma;
    }
    Ok(temperature)
}

/// Inverts the Boltzmann formula: the unique T0 at which a regression of
/// `regression_delta` is accepted with probability `target_p`.
pub fn calibrate_t0(regression_delta: f64, target_p: f64) -> Result<f64> {
    if !(regression_delta.is_finite() && regression_delta > 0.0) {
        return Err(Error::Domain(format!(
            "regression delta must be positive, got {regression_delta}"
        )));
    }
    if !(target_p.is_finite() && target_p > 0.0 && target_p < 1.0) {
        return Err(Error::Domain(format!("target probability must be in (0,1), got {target_p}")));
    }
    Ok(regression_delta / (-target_p.ln()))
}

/// Picks the best of K investigator results: maximal value, ties broken by
/// the lowest investigator index.
pub fn select_best(results: &[(usize, MetricValue)]) -> Result<usize> {
    let (first, rest) = results
        .split_first()
        .ok_or_else(|| Error::Domain("select_best requires at least one result".into()))?;
    for (_, metric) in rest {
        check_comparable(&first.1, metric)?;
    }
    let mut best = first;
    for entry in rest {
        let better = entry.1.value() > best.1.value()
            || (entry.1.value() == best.1.value() && entry.0 < best.0);
        if better {
            best = entry;
        }
    }
    Ok(best.0)
}
