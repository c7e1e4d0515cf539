//! The rule task's parsing function: YAML text to `RuleSet`, with one
//! precise error per malformed element.
//!
//! Grammar (normative, bit-exact):
//!
//! ```yaml
//! default: <label>
//! rules:
//!   - label: <label>
//!     all:            # or `any:`, exactly one of the two
//!       - <feature> <op> <threshold>
//! ```
//!
//! Labels and features are identifiers (`[A-Za-z_][A-Za-z0-9_]*`), ops are
//! one of `lt`, `le`, `gt`, `ge`, thresholds are decimal numbers. Unknown
//! feature names are deferred to evaluation time; everything else is
//! checked here.

use serde_yaml::Value;

use super::{Combinator, CompareOp, Condition, Rule, RuleSet};

/// One structural problem, located by a document path like `rules[2].all[0]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RulesetParseError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for RulesetParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn identifier_at(value: &Value, path: &str, errors: &mut Vec<RulesetParseError>) -> Option<String> {
    match value {
        Value::String(s) if is_identifier(s) => Some(s.clone()),
        Value::String(s) => {
            errors.push(RulesetParseError {
                path: path.to_string(),
                message: format!("{s:?} is not an identifier"),
            });
            None
        }
        other => {
            errors.push(RulesetParseError {
                path: path.to_string(),
                message: format!("expected an identifier string, got {}", kind_of(other)),
            });
            None
        }
    }
}

fn kind_of(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Sequence(_) => "a sequence",
        Value::Mapping(_) => "a mapping",
        Value::Tagged(_) => "a tagged value",
    }
}

fn parse_condition(raw: &Value, path: &str, errors: &mut Vec<RulesetParseError>) -> Option<Condition> {
    let text = match raw {
        Value::String(s) => s,
        other => {
            errors.push(RulesetParseError {
                path: path.to_string(),
                message: format!("condition must be a \"<feature> <op> <threshold>\" string, got {}", kind_of(other)),
            });
            return None;
        }
    };
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 3 {
        errors.push(RulesetParseError {
            path: path.to_string(),
            message: format!("condition needs exactly 3 tokens, got {} in {text:?}", tokens.len()),
        });
        return None;
    }
    if !is_identifier(tokens[0]) {
        errors.push(RulesetParseError {
            path: path.to_string(),
            message: format!("feature {:?} is not an identifier", tokens[0]),
        });
        return None;
    }
    let Some(op) = CompareOp::parse(tokens[1]) else {
        errors.push(RulesetParseError {
            path: path.to_string(),
            message: format!("unknown operator {:?} (expected lt, le, gt, or ge)", tokens[1]),
        });
        return None;
    };
    let threshold = match tokens[2].parse::<f64>() {
        Ok(t) if t.is_finite() => t,
        _ => {
            errors.push(RulesetParseError {
                path: path.to_string(),
                message: format!("threshold {:?} is not a finite number", tokens[2]),
            });
            return None;
        }
    };
    Some(Condition { feature: tokens[0].to_string(), op, threshold })
}

fn parse_rule(raw: &Value, path: &str, errors: &mut Vec<RulesetParseError>) -> Option<Rule> {
    let mapping = match raw {
        Value::Mapping(m) => m,
        other => {
            errors.push(RulesetParseError {
                path: path.to_string(),
                message: format!("rule must be a mapping, got {}", kind_of(other)),
            });
            return None;
        }
    };

    let mut label = None;
    let mut body: Option<(Combinator, &Value)> = None;
    for (key, value) in mapping {
        let Value::String(key) = key else {
            errors.push(RulesetParseError {
                path: path.to_string(),
                message: "rule keys must be strings".into(),
            });
            continue;
        };
        match key.as_str() {
            "label" => label = identifier_at(value, &format!("{path}.label"), errors),
            "all" | "any" => {
                let combinator = if key == "all" { Combinator::All } else { Combinator::Any };
                if body.is_some() {
                    errors.push(RulesetParseError {
                        path: path.to_string(),
                        message: "rule must have exactly one of `all:` or `any:`, found both".into(),
                    });
                } else {
                    body = Some((combinator, value));
                }
            }
            other => errors.push(RulesetParseError {
                path: format!("{path}.{other}"),
                message: format!("unknown key {other:?} (expected label, all, any)"),
            }),
        }
    }

    let label = match label {
        Some(l) => l,
        None => {
            if !mapping.contains_key(Value::String("label".into())) {
                errors.push(RulesetParseError {
                    path: path.to_string(),
                    message: "rule is missing `label:`".into(),
                });
            }
            return None;
        }
    };
    let Some((combinator, conditions_value)) = body else {
        errors.push(RulesetParseError {
            path: path.to_string(),
            message: "rule must have exactly one of `all:` or `any:`".into(),
        });
        return None;
    };
    let key = match combinator {
        Combinator::All => "all",
        Combinator::Any => "any",
    };
    let items = match conditions_value {
        Value::Sequence(items) => items,
        other => {
            errors.push(RulesetParseError {
                path: format!("{path}.{key}"),
                message: format!("conditions must be a sequence, got {}", kind_of(other)),
            });
            return None;
        }
    };
    if items.is_empty() {
        errors.push(RulesetParseError {
            path: format!("{path}.{key}"),
            message: "conditions must be non-empty".into(),
        });
        return None;
    }
    let mut conditions = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if let Some(c) = parse_condition(item, &format!("{path}.{key}[{i}]"), errors) {
            conditions.push(c);
        }
    }
    if conditions.len() != items.len() {
        return None;
    }
    Some(Rule { label, combinator, conditions })
}

/// Parses a ruleset document, returning either a structurally valid
/// `RuleSet` or the full list of problems found.
pub fn parse_ruleset(text: &str) -> Result<RuleSet, Vec<RulesetParseError>> {
    let value: Value = match serde_yaml::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            return Err(vec![RulesetParseError { path: "$".into(), message: format!("invalid YAML: {e}") }])
        }
    };
    let mut errors = Vec::new();

    let Value::Mapping(root) = &value else {
        return Err(vec![RulesetParseError {
            path: "$".into(),
            message: format!("document must be a mapping, got {}", kind_of(&value)),
        }]);
    };

    let mut default_label = None;
    let mut rules_value = None;
    for (key, val) in root {
        let Value::String(key) = key else {
            errors.push(RulesetParseError { path: "$".into(), message: "top-level keys must be strings".into() });
            continue;
        };
        match key.as_str() {
            "default" => default_label = identifier_at(val, "default", &mut errors),
            "rules" => rules_value = Some(val),
            other => errors.push(RulesetParseError {
                path: other.to_string(),
                message: format!("unknown key {other:?} (expected default, rules)"),
            }),
        }
    }
    if !root.contains_key(Value::String("default".into())) {
        errors.push(RulesetParseError { path: "default".into(), message: "missing mandatory `default:` label".into() });
    }

    let mut rules = Vec::new();
    match rules_value {
        Some(Value::Sequence(items)) => {
            for (i, item) in items.iter().enumerate() {
                if let Some(rule) = parse_rule(item, &format!("rules[{i}]"), &mut errors) {
                    rules.push(rule);
                }
            }
        }
        // A bare `rules:` key is an empty list.
        Some(Value::Null) => {}
        Some(other) => errors.push(RulesetParseError {
            path: "rules".into(),
            message: format!("rules must be a sequence, got {}", kind_of(other)),
        }),
        None => errors.push(RulesetParseError { path: "rules".into(), message: "missing `rules:` list".into() }),
    }

    match (default_label, errors.is_empty()) {
        (Some(default), true) => Ok(RuleSet::new(rules, default)),
        _ => Err(errors),
    }
}

/// Canonical serialization; the output reparses to an equal `RuleSet`.
pub fn serialize_ruleset(ruleset: &RuleSet) -> String {
    let mut out = String::new();
    out.push_str(&format!("default: {}\n", ruleset.default_label()));
    if ruleset.rules().is_empty() {
        out.push_str("rules: []\n");
        return out;
    }
    out.push_str("rules:\n");
    for rule in ruleset.rules() {
        out.push_str(&format!("  - label: {}\n", rule.label));
        let key = match rule.combinator {
            Combinator::All => "all",
            Combinator::Any => "any",
        };
        out.push_str(&format!("    {key}:\n"));
        for c in &rule.conditions {
            out.push_str(&format!("      - {} {} {}\n", c.feature, c.op.as_str(), c.threshold));
        }
    }
    out
}
