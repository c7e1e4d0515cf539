//! YAML rule classifiers with first-match semantics, dataset ingestion,
//! stratified splitting, and k-fold cross validation.

mod dataset;
mod parse;
mod task;

pub use dataset::{kfold_indices, stratified_split, Dataset};
pub use parse::{parse_ruleset, serialize_ruleset, RulesetParseError};
pub use task::{AcceptanceMode, RulesetTask};

use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, MetricValue, VisibilityTier};

/// At most this many misclassified rows are listed in diagnostics, so the
/// text fed back to proposers stays bounded.
pub const MISCLASSIFIED_LISTING_CAP: usize = 50;

/// Comparison operators allowed in rule conditions. Equality on reals is
/// deliberately excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "lt" => Some(CompareOp::Lt),
            "le" => Some(CompareOp::Le),
            "gt" => Some(CompareOp::Gt),
            "ge" => Some(CompareOp::Ge),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CompareOp::Lt => "lt",
            CompareOp::Le => "le",
            CompareOp::Gt => "gt",
            CompareOp::Ge => "ge",
        }
    }

    pub fn holds(&self, value: f64, threshold: f64) -> bool {
        match self {
            CompareOp::Lt => value < threshold,
            CompareOp::Le => value <= threshold,
            CompareOp::Gt => value > threshold,
            CompareOp::Ge => value >= threshold,
        }
    }
}

/// One threshold comparison on a numeric feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub feature: String,
    pub op: CompareOp,
    pub threshold: f64,
}

/// How a rule combines its conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combinator {
    All,
    Any,
}

/// A labeled rule: fires when its combinator over the conditions holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub label: String,
    pub combinator: Combinator,
    pub conditions: Vec<Condition>,
}

/// An ordered rule list with first-match semantics and a mandatory
/// default label for samples no rule matches.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    default_label: String,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, default_label: impl Into<String>) -> Self {
        Self { rules, default_label: default_label.into() }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn default_label(&self) -> &str {
        &self.default_label
    }

    /// Every feature name referenced by any condition.
    pub fn referenced_features(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().flat_map(|r| r.conditions.iter().map(|c| c.feature.as_str()))
    }

    /// Every label this ruleset can emit.
    pub fn emitted_labels(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.label.as_str()).chain(std::iter::once(self.default_label()))
    }
}

fn feature_value(names: &[String], values: &[f64], feature: &str) -> Result<f64> {
    match names.iter().position(|n| n == feature) {
        Some(i) => Ok(values[i]),
        None => Err(Error::Evaluation(format!("rule references unknown feature {feature:?}"))),
    }
}

fn rule_matches(rule: &Rule, names: &[String], values: &[f64]) -> Result<bool> {
    match rule.combinator {
        Combinator::All => {
            for c in &rule.conditions {
                if !c.op.holds(feature_value(names, values, &c.feature)?, c.threshold) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Combinator::Any => {
            for c in &rule.conditions {
                if c.op.holds(feature_value(names, values, &c.feature)?, c.threshold) {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

/// First-match classification: the label of the lowest-index rule whose
/// conditions hold, or the default label when none do.
pub fn classify<'a>(ruleset: &'a RuleSet, names: &[String], values: &[f64]) -> Result<&'a str> {
    for rule in ruleset.rules() {
        if rule_matches(rule, names, values)? {
            return Ok(&rule.label);
        }
    }
    Ok(ruleset.default_label())
}

/// Scores a ruleset on a dataset split: accuracy plus per-class precision
/// and recall, with a confusion matrix and a capped misclassification
/// listing as diagnostics.
pub fn evaluate_ruleset(
    ruleset: &RuleSet,
    split: &Dataset,
    tier: VisibilityTier,
    artifact_hash: u64,
) -> Result<EvaluationReport> {
    if split.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty split".into()));
    }
    let classes = split.classes();
    let names = split.feature_names();
    let class_index = |label: &str| -> Result<usize> {
        classes.iter().position(|c| c == label).ok_or_else(|| {
            Error::Evaluation(format!("label {label:?} is not in the dataset's class set"))
        })
    };

    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut misclassified: Vec<usize> = Vec::new();
    let mut predictions: Vec<usize> = Vec::with_capacity(split.len());
    for (row, (values, actual)) in split.rows().enumerate() {
        let predicted = classify(ruleset, names, values)?;
        let (a, p) = (class_index(actual)?, class_index(predicted)?);
        confusion[a][p] += 1;
        predictions.push(p);
        if a != p {
            misclassified.push(row);
        }
    }

    let correct: usize = (0..classes.len()).map(|i| confusion[i][i]).sum();
    let accuracy = correct as f64 / split.len() as f64;
    let mut metrics = vec![MetricValue::new("accuracy", accuracy)?];
    for (i, class) in classes.iter().enumerate() {
        let tp = confusion[i][i];
        let predicted: usize = (0..classes.len()).map(|a| confusion[a][i]).sum();
        let actual: usize = confusion[i].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        metrics.push(MetricValue::new(format!("precision_{class}"), precision)?);
        metrics.push(MetricValue::new(format!("recall_{class}"), recall)?);
    }

    let mut diag = String::new();
    diag.push_str("confusion matrix (rows = actual, cols = predicted):\n");
    diag.push_str(&format!("{:>20}", ""));
    for class in classes {
        diag.push_str(&format!("{class:>14}"));
    }
    diag.push('\n');
    for (i, class) in classes.iter().enumerate() {
        diag.push_str(&format!("{class:>20}"));
        for count in &confusion[i] {
            diag.push_str(&format!("{count:>14}"));
        }
        diag.push('\n');
    }
    diag.push_str(&format!(
        "\nmisclassified: {} of {} rows (listing up to {})\n",
        misclassified.len(),
        split.len(),
        MISCLASSIFIED_LISTING_CAP
    ));
    for &row in misclassified.iter().take(MISCLASSIFIED_LISTING_CAP) {
        let (values, actual) = split.row(row);
        let predicted = &classes[predictions[row]];
        diag.push_str(&format!("  row {row}: actual={actual} predicted={predicted}"));
        for (name, value) in names.iter().zip(values) {
            diag.push_str(&format!(" {name}={value}"));
        }
        diag.push('\n');
    }

    Ok(EvaluationReport::new(tier, metrics, diag, artifact_hash))
}
