//! Deterministic rule table standing in for the LLM annotator.
//!
//! Rules, in order:
//! - self pairs: medium if the kind is hot or sharp, else low;
//! - anything with the robot, or two agents: low;
//! - vulnerable agent (baby, pet) × hazard-attributed object: high;
//! - adult × hazard-attributed object: medium;
//! - water source × electrical object: medium;
//! - everything else: low.

use super::{AnnotateError, AnnotationBackend, AnnotationCache, AnnotationSource, RiskAnnotation, RiskLevel};
use crate::scene::{AgentClass, Attribute, EntityCategory};

fn risk_word(attr: Attribute) -> &'static str {
    match attr {
        Attribute::Hot => "thermal",
        Attribute::Sharp => "sharp",
        Attribute::Electrical => "electrical",
        Attribute::WaterSource => "water",
        _ => unreachable!("only hazard attributes map to risk types"),
    }
}

fn hazard_words(c: EntityCategory) -> Vec<String> {
    c.static_attributes()
        .iter()
        .filter(|a| a.is_hazard())
        .map(|&a| risk_word(a).to_string())
        .collect()
}

fn lower(c: EntityCategory) -> String {
    let name = c.name();
    let mut out = String::new();
    for (i, ch) in name.chars().enumerate() {
        if ch.is_ascii_uppercase() && i > 0 {
            out.push(' ');
        }
        out.push(ch.to_ascii_lowercase());
    }
    out
}

fn with_article(c: EntityCategory) -> String {
    let word = lower(c);
    let article = if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    };
    format!("{article} {word}")
}

fn list(words: &[String]) -> String {
    match words {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn low(a: EntityCategory, b: EntityCategory) -> (RiskLevel, Vec<String>, String) {
    (
        RiskLevel::Low,
        Vec::new(),
        format!(
            "No meaningful hazard arises from {} being near {}.",
            with_article(a),
            with_article(b)
        ),
    )
}

/// Annotation for one pair under the builtin rules (canonical order).
pub fn builtin_annotation(a: EntityCategory, b: EntityCategory) -> RiskAnnotation {
    let (a, b) = if a.name() <= b.name() { (a, b) } else { (b, a) };
    let (level, risk_type, reason) = rule(a, b);
    RiskAnnotation {
        type1: a,
        type2: b,
        danger_level: level,
        risk_type,
        llm_reason: reason,
    }
    .canonicalize()
}

fn rule(a: EntityCategory, b: EntityCategory) -> (RiskLevel, Vec<String>, String) {
    if a == b {
        let hot_or_sharp = a.has_static(Attribute::Hot) || a.has_static(Attribute::Sharp);
        if hot_or_sharp && !a.is_agent() {
            let words = hazard_words(a);
            return (
                RiskLevel::Medium,
                words.clone(),
                format!(
                    "Several {} items kept together compound {} hazards when handled.",
                    lower(a),
                    list(&words)
                ),
            );
        }
        return low(a, b);
    }
    if a.is_robot() || b.is_robot() || (a.is_agent() && b.is_agent()) {
        return low(a, b);
    }
    let (agent, object) = match (a.is_agent(), b.is_agent()) {
        (true, false) => (Some(a), b),
        (false, true) => (Some(b), a),
        _ => (None, a),
    };
    if let Some(agent) = agent {
        if !object.is_hazard_source() {
            return low(a, b);
        }
        let mut words = hazard_words(object);
        words.push("physical".to_string());
        return match agent.agent_class() {
            Some(AgentClass::Vulnerable) => (
                RiskLevel::High,
                words.clone(),
                format!(
                    "A {} close to {} is exposed to {} injury and cannot judge the danger itself.",
                    lower(agent),
                    with_article(object),
                    list(&words)
                ),
            ),
            _ => (
                RiskLevel::Medium,
                words.clone(),
                format!(
                    "An {} in contact with {} can still suffer {} injury through carelessness.",
                    lower(agent),
                    with_article(object),
                    list(&words)
                ),
            ),
        };
    }
    let water_electric = |x: EntityCategory, y: EntityCategory| {
        x.has_static(Attribute::WaterSource) && y.has_static(Attribute::Electrical)
    };
    if water_electric(a, b) || water_electric(b, a) {
        let (wet, live) = if water_electric(a, b) { (a, b) } else { (b, a) };
        return (
            RiskLevel::Medium,
            vec!["water".to_string(), "electrical".to_string()],
            format!(
                "Water from the {} near the {} creates a shock and short-circuit hazard.",
                lower(wet),
                lower(live)
            ),
        );
    }
    low(a, b)
}

/// The complete table over every catalog pair, self-pairs included.
pub fn builtin_risk_table() -> AnnotationCache {
    let mut cache = AnnotationCache::new();
    for (a, b) in super::all_category_pairs() {
        cache.insert(builtin_annotation(a, b), AnnotationSource::Builtin);
    }
    cache
}

/// Backend that serves the rule table through the same JSON path as an LLM.
#[derive(Debug, Default, Clone, Copy)]
pub struct BuiltinBackend;

impl AnnotationBackend for BuiltinBackend {
    fn source(&self) -> AnnotationSource {
        AnnotationSource::Builtin
    }

    fn query(&self, a: EntityCategory, b: EntityCategory) -> Result<String, AnnotateError> {
        Ok(serde_json::to_string(&builtin_annotation(a, b)).expect("annotation serializes"))
    }
}
