//! The rule-classifier task: wires rulesets, splits, and tiers into the
//! task contract.

use std::collections::HashSet;

use crate::artifact::{Artifact, FormatTag};
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, MetricValue, VisibilityTier};
use crate::task::{ParseFailure, Task};

use super::{evaluate_ruleset, kfold_indices, parse_ruleset, stratified_split, Dataset, RuleSet};

/// What the validation tier scores: the held-out validation split, or
/// k-fold cross validation over the training split (unweighted mean of
/// per-fold accuracy).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptanceMode {
    ValidationSplit,
    CrossValidation { k: usize },
}

#[derive(Debug)]
pub struct RulesetTask {
    id: String,
    train: Dataset,
    validation: Dataset,
    test: Dataset,
    folds: Option<Vec<Vec<usize>>>,
    seed_yaml: String,
}

impl RulesetTask {
    /// Splits `dataset` with the given fractions and seed, validates the
    /// seed ruleset, and (in CV mode) freezes the fold assignment.
    pub fn new(
        id: impl Into<String>,
        dataset: Dataset,
        fractions: [f64; 3],
        split_seed: u64,
        acceptance: AcceptanceMode,
        seed_yaml: impl Into<String>,
    ) -> Result<Self> {
        let seed_yaml = seed_yaml.into();
        let splits = stratified_split(&dataset, &fractions, split_seed)?;
        let mut iter = splits.into_iter();
        let (train, validation, test) =
            (iter.next().unwrap(), iter.next().unwrap(), iter.next().unwrap());
        let folds = match acceptance {
            AcceptanceMode::ValidationSplit => None,
            AcceptanceMode::CrossValidation { k } => Some(kfold_indices(&train, k, split_seed)?),
        };
        let task = Self { id: id.into(), train, validation, test, folds, seed_yaml };
        // The seed must survive the task's own parser.
        task.parse(&task.seed_yaml.clone())
            .map_err(|f| Error::Config(format!("seed ruleset invalid: {}", f.error)))?;
        Ok(task)
    }

    fn ruleset_for(&self, artifact: &Artifact) -> Result<RuleSet> {
        parse_ruleset(artifact.body()).map_err(|errors| {
            Error::Evaluator(format!(
                "artifact {:016x} does not parse as a ruleset: {}",
                artifact.content_hash(),
                errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
            ))
        })
    }

    /// Schema checks beyond structure: the parser f rejects rules that
    /// reference features or emit labels this dataset does not have, so a
    /// proposer typo costs an attempt instead of aborting the run.
    fn check_schema(&self, ruleset: &RuleSet) -> std::result::Result<(), String> {
        let known_features: HashSet<&str> =
            self.train.feature_names().iter().map(|s| s.as_str()).collect();
        let known_classes: HashSet<&str> =
            self.train.classes().iter().map(|s| s.as_str()).collect();
        for feature in ruleset.referenced_features() {
            if !known_features.contains(feature) {
                return Err(format!("unknown feature {feature:?}"));
            }
        }
        for label in ruleset.emitted_labels() {
            if !known_classes.contains(label) {
                return Err(format!("label {label:?} is not a dataset class"));
            }
        }
        Ok(())
    }

    pub fn train_split(&self) -> &Dataset {
        &self.train
    }

    pub fn validation_split(&self) -> &Dataset {
        &self.validation
    }

    pub fn test_split(&self) -> &Dataset {
        &self.test
    }
}

impl Task for RulesetTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn primary_metric(&self) -> &str {
        "accuracy"
    }

    fn seed_artifact(&self) -> Result<Artifact> {
        Artifact::new(FormatTag::RuleYaml, self.seed_yaml.clone())
    }

    fn parse(&self, raw: &str) -> std::result::Result<Artifact, ParseFailure> {
        let body = raw.trim();
        let ruleset = parse_ruleset(body).map_err(|errors| ParseFailure {
            raw_output: raw.to_string(),
            error: errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "),
        })?;
        self.check_schema(&ruleset).map_err(|error| ParseFailure {
            raw_output: raw.to_string(),
            error,
        })?;
        Artifact::new(FormatTag::RuleYaml, body)
            .map_err(|e| ParseFailure { raw_output: raw.to_string(), error: e.to_string() })
    }

    fn evaluate(&self, artifact: &Artifact, tier: VisibilityTier) -> Result<EvaluationReport> {
        let ruleset = self.ruleset_for(artifact)?;
        let hash = artifact.content_hash();
        match (tier, &self.folds) {
            (VisibilityTier::TrainDiagnostics, _) => {
                evaluate_ruleset(&ruleset, &self.train, tier, hash)
            }
            (VisibilityTier::Validation, None) => {
                evaluate_ruleset(&ruleset, &self.validation, tier, hash)
            }
            (VisibilityTier::Validation, Some(folds)) => {
                let mut fold_scores = Vec::with_capacity(folds.len());
                let mut diag = String::from("cross-validation fold breakdown:\n");
                for (i, fold) in folds.iter().enumerate() {
                    let subset = self.train.subset(fold)?;
                    let report = evaluate_ruleset(&ruleset, &subset, tier, hash)?;
                    let accuracy = report
                        .metric("accuracy")
                        .expect("evaluate_ruleset always emits accuracy")
                        .value();
                    diag.push_str(&format!("  fold {i}: accuracy {accuracy:.6} ({} rows)\n", fold.len()));
                    fold_scores.push(accuracy);
                }
                let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
                diag.push_str(&format!("  mean: {mean:.6}\n"));
                Ok(EvaluationReport::new(
                    tier,
                    vec![MetricValue::new("accuracy", mean)?],
                    diag,
                    hash,
                ))
            }
            (VisibilityTier::Test, _) => evaluate_ruleset(&ruleset, &self.test, tier, hash),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        // Separable: label is "pos" iff x >= 10.
        let mut rows = Vec::new();
        for i in 0..60 {
            rows.push((vec![i as f64 % 10.0, i as f64], "neg".to_string()));
        }
        for i in 0..40 {
            rows.push((vec![10.0 + i as f64 % 7.0, i as f64], "pos".to_string()));
        }
        Dataset::new(vec!["x".into(), "y".into()], rows).unwrap()
    }

    const SEED_RULES: &str = "default: neg\nrules:\n  - label: pos\n    all:\n      - x ge 10\n";

    fn task(mode: AcceptanceMode) -> RulesetTask {
        RulesetTask::new("toy", toy_dataset(), [0.6, 0.2, 0.2], 42, mode, SEED_RULES).unwrap()
    }

    #[test]
    fn tiers_use_their_splits() {
        let task = task(AcceptanceMode::ValidationSplit);
        let artifact = task.seed_artifact().unwrap();
        for tier in [
            VisibilityTier::TrainDiagnostics,
            VisibilityTier::Validation,
            VisibilityTier::Test,
        ] {
            let report = task.evaluate(&artifact, tier).unwrap();
            assert_eq!(report.tier(), tier);
            assert_eq!(report.metric("accuracy").unwrap().value(), 1.0);
            assert_eq!(report.artifact_hash(), artifact.content_hash());
        }
    }

    #[test]
    fn cv_mode_reports_fold_mean() {
        let task = task(AcceptanceMode::CrossValidation { k: 5 });
        let artifact = task.seed_artifact().unwrap();
        let report = task.evaluate(&artifact, VisibilityTier::Validation).unwrap();
        assert_eq!(report.metric("accuracy").unwrap().value(), 1.0);
        assert!(report.diagnostics().contains("fold 4"));
    }

    #[test]
    fn parser_rejects_unknown_feature_and_label() {
        let task = task(AcceptanceMode::ValidationSplit);
        let bad_feature = "default: neg\nrules:\n  - label: pos\n    all:\n      - radius ge 10\n";
        let err = task.parse(bad_feature).unwrap_err();
        assert!(err.error.contains("radius"), "{}", err.error);
        let bad_label = "default: neg\nrules:\n  - label: positive\n    all:\n      - x ge 10\n";
        let err = task.parse(bad_label).unwrap_err();
        assert!(err.error.contains("positive"), "{}", err.error);
    }

    #[test]
    fn parser_accepts_and_trims_valid_rulesets() {
        let task = task(AcceptanceMode::ValidationSplit);
        let artifact = task.parse(&format!("\n{SEED_RULES}\n\n")).unwrap();
        assert_eq!(artifact.format_tag(), FormatTag::RuleYaml);
        assert_eq!(artifact.body(), SEED_RULES.trim());
    }

    #[test]
    fn construction_rejects_bad_seed() {
        let err = RulesetTask::new(
            "toy",
            toy_dataset(),
            [0.6, 0.2, 0.2],
            42,
            AcceptanceMode::ValidationSplit,
            "default: neg\nrules:\n  - label: pos\n    all:\n      - nope ge 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
