//! Distance-rule runtime monitor: the static-rules baseline.
//!
//! Each rule is a safety invariant "never: subject within `max_distance` of
//! object", checked against the current scene state. Nothing outside the
//! enumerated rules can ever be reported.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Pattern, PlanError};
use crate::scene::{distance, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtlRule {
    pub id: String,
    pub subject: Pattern,
    pub object: Pattern,
    /// Meters, > 0.
    pub max_distance: f64,
    pub message: String,
}

impl LtlRule {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.max_distance.is_finite() && self.max_distance > 0.0) {
            return Err(PlanError::BadRule {
                id: self.id.clone(),
                reason: format!("max_distance {} must be positive", self.max_distance),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleSet {
    /// Covers every hazard pattern the dataset labels.
    Full,
    /// Baby near kitchen hazards only.
    Partial,
}

const FULL_RULES: &str = include_str!("../../rules/full.json");
const PARTIAL_RULES: &str = include_str!("../../rules/partial.json");

pub fn builtin_rules(set: RuleSet) -> Vec<LtlRule> {
    let text = match set {
        RuleSet::Full => FULL_RULES,
        RuleSet::Partial => PARTIAL_RULES,
    };
    parse_rules(text).expect("bundled rule sets are valid")
}

pub fn parse_rules(text: &str) -> Result<Vec<LtlRule>, PlanError> {
    let rules: Vec<LtlRule> = serde_json::from_str(text).map_err(|e| PlanError::RuleFile(e.to_string()))?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

/// Reads a JSON list of rules.
pub fn load_rules(path: &Path) -> Result<Vec<LtlRule>, PlanError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PlanError::RuleFile(format!("{}: {e}", path.display())))?;
    parse_rules(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub subject: String,
    pub object: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySignal {
    pub safe: bool,
    /// Fired rule ids, in rule order, each once.
    pub violated_rules: Vec<String>,
    pub messages: Vec<String>,
    pub violations: Vec<Violation>,
}

/// Checks every rule against the scene. A pair matched by a rule in both
/// orders is reported once.
pub fn ltl_evaluate(rules: &[LtlRule], scene: &Scene) -> SafetySignal {
    let mut violated_rules = Vec::new();
    let mut messages = Vec::new();
    let mut violations: Vec<Violation> = Vec::new();
    for rule in rules {
        let mut fired = false;
        for s in scene.entities.iter().filter(|e| rule.subject.matches(e)) {
            for o in scene.entities.iter().filter(|e| rule.object.matches(e)) {
                if s.id == o.id {
                    continue;
                }
                let d = distance(&s.position, &o.position);
                if d > rule.max_distance {
                    continue;
                }
                let seen = violations
                    .iter()
                    .any(|v| v.rule == rule.id && v.subject == o.id && v.object == s.id);
                if !seen {
                    violations.push(Violation {
                        rule: rule.id.clone(),
                        subject: s.id.clone(),
                        object: o.id.clone(),
                        distance: d,
                    });
                }
                fired = true;
            }
        }
        if fired {
            violated_rules.push(rule.id.clone());
            messages.push(rule.message.clone());
        }
    }
    SafetySignal {
        safe: violated_rules.is_empty(),
        violated_rules,
        messages,
        violations,
    }
}
