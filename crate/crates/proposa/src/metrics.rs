//! Metric values, visibility tiers, and evaluation reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named metric value. Always stored higher-is-better; minimization
/// tasks negate at ingestion so acceptance logic compares one way only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    name: String,
    value: f64,
}

impl MetricValue {
    /// Rejects non-finite values: NaN or infinity never enters a report.
    pub fn new(name: impl Into<String>, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("metric value must be finite, got {value}")));
        }
        Ok(Self { name: name.into(), value })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Which information tier an evaluation report belongs to.
///
/// Proposers may see `TrainDiagnostics` only; acceptance decisions read
/// `Validation`; `Test` is evaluated exactly once, at finalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityTier {
    TrainDiagnostics,
    Validation,
    Test,
}

/// The result of evaluating one artifact on one tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    tier: VisibilityTier,
    metrics: Vec<MetricValue>,
    diagnostics: String,
    artifact_hash: u64,
}

impl EvaluationReport {
    pub fn new(
        tier: VisibilityTier,
        metrics: Vec<MetricValue>,
        diagnostics: impl Into<String>,
        artifact_hash: u64,
    ) -> Self {
        Self { tier, metrics, diagnostics: diagnostics.into(), artifact_hash }
    }

    pub fn tier(&self) -> VisibilityTier {
        self.tier
    }

    pub fn metrics(&self) -> &[MetricValue] {
        &self.metrics
    }

    pub fn metric(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.name() == name)
    }

    pub fn diagnostics(&self) -> &str {
        &self.diagnostics
    }

    pub fn artifact_hash(&self) -> u64 {
        self.artifact_hash
    }
}
