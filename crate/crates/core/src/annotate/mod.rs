//! Pairwise risk annotations r(v_i, v_j), their cache, and the backends that
//! produce them (the builtin rule table or an LLM over HTTP).

mod builtin;
mod http;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm::extract_json_object;
use crate::scene::EntityCategory;

pub use builtin::{builtin_annotation, builtin_risk_table, BuiltinBackend};
pub use http::LlmAnnotationBackend;

/// Closed vocabulary for `risk_type`; other strings are kept but flagged.
pub const RISK_TYPES: [&str; 6] = ["thermal", "physical", "water", "electrical", "sharp", "chemical"];

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("annotation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("annotation violates schema ({reason}); raw payload: {raw}")]
    SchemaViolation { reason: String, raw: String },
    #[error("unknown risk level `{0}`")]
    UnknownRiskLevel(String),
    #[error("cache file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache file is not valid: {0}")]
    CacheFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    /// low → 0.25, medium → 0.50, high → 1.00.
    pub fn value(self) -> f64 {
        match self {
            RiskLevel::Low => 0.25,
            RiskLevel::Medium => 0.50,
            RiskLevel::High => 1.00,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }

    /// Capitalized, as shown in notices.
    pub fn title(self) -> &'static str {
        match self {
            RiskLevel::Low => "Low",
            RiskLevel::Medium => "Medium",
            RiskLevel::High => "High",
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RiskLevel {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(RiskLevel::Low),
            "medium" => Ok(RiskLevel::Medium),
            "high" => Ok(RiskLevel::High),
            _ => Err(AnnotateError::UnknownRiskLevel(s.to_string())),
        }
    }
}

/// Numeric risk value for a level label.
pub fn risk_value(label: &str) -> Result<f64, AnnotateError> {
    label.parse::<RiskLevel>().map(RiskLevel::value)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskAnnotation {
    pub type1: EntityCategory,
    pub type2: EntityCategory,
    pub danger_level: RiskLevel,
    pub risk_type: Vec<String>,
    pub llm_reason: String,
}

impl RiskAnnotation {
    /// Reorders (type1, type2) lexicographically by name.
    pub fn canonicalize(mut self) -> Self {
        if self.type1.name() > self.type2.name() {
            std::mem::swap(&mut self.type1, &mut self.type2);
        }
        self
    }

    pub fn key(&self) -> String {
        pair_key(self.type1, self.type2)
    }

    pub fn unknown_risk_types(&self) -> Vec<&str> {
        self.risk_type
            .iter()
            .map(String::as_str)
            .filter(|t| !RISK_TYPES.contains(t))
            .collect()
    }

    pub fn involves(&self, c: EntityCategory) -> bool {
        self.type1 == c || self.type2 == c
    }
}

/// Canonical cache key `"A|B"` with names in lexicographic order.
pub fn pair_key(a: EntityCategory, b: EntityCategory) -> String {
    let (x, y) = if a.name() <= b.name() { (a, b) } else { (b, a) };
    format!("{}|{}", x.name(), y.name())
}

/// Parses and validates an annotation payload for the pair `(a, b)`.
///
/// Accepts surrounding prose or code fences. Category aliases (e.g. "Child")
/// are resolved; risk types are lowercased; the result is canonicalized.
pub fn parse_annotation(
    raw: &str,
    a: EntityCategory,
    b: EntityCategory,
) -> Result<RiskAnnotation, AnnotateError> {
    let bad = |reason: &str| AnnotateError::SchemaViolation {
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    let json = extract_json_object(raw).ok_or_else(|| bad("no JSON object"))?;
    let v: Value = serde_json::from_str(json).map_err(|e| bad(&format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| bad("not an object"))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| bad(&format!("missing `{name}`")));
    let category = |name: &str| -> Result<EntityCategory, AnnotateError> {
        field(name)?
            .as_str()
            .ok_or_else(|| bad(&format!("`{name}` is not a string")))?
            .parse::<EntityCategory>()
            .map_err(|e| bad(&e.to_string()))
    };
    let t1 = category("type1")?;
    let t2 = category("type2")?;
    if pair_key(t1, t2) != pair_key(a, b) {
        return Err(bad(&format!("annotates {t1}/{t2}, expected {a}/{b}")));
    }
    let level = field("danger_level")?
        .as_str()
        .ok_or_else(|| bad("`danger_level` is not a string"))?
        .parse::<RiskLevel>()
        .map_err(|e| bad(&e.to_string()))?;
    let risk_type: Vec<String> = field("risk_type")?
        .as_array()
        .ok_or_else(|| bad("`risk_type` is not an array"))?
        .iter()
        .map(|t| t.as_str().map(|s| s.trim().to_ascii_lowercase()))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("`risk_type` entries must be strings"))?;
    if level != RiskLevel::Low && risk_type.is_empty() {
        return Err(bad("`risk_type` empty for a non-low danger level"));
    }
    let llm_reason = field("llm_reason")?
        .as_str()
        .ok_or_else(|| bad("`llm_reason` is not a string"))?
        .to_string();
    let ann = RiskAnnotation {
        type1: t1,
        type2: t2,
        danger_level: level,
        risk_type,
        llm_reason,
    }
    .canonicalize();
    let unknown = ann.unknown_risk_types();
    if !unknown.is_empty() {
        log::warn!("{}: unrecognized risk types {:?}", ann.key(), unknown);
    }
    Ok(ann)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Llm,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    #[serde(flatten)]
    pub annotation: RiskAnnotation,
    pub source: AnnotationSource,
}

/// Canonical pair key → annotation. Serialized as a pretty JSON map with
/// sorted keys and fixed field order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationCache {
    entries: BTreeMap<String, CacheEntry>,
}

impl AnnotationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, a: EntityCategory, b: EntityCategory) -> Option<&RiskAnnotation> {
        self.entries.get(&pair_key(a, b)).map(|e| &e.annotation)
    }

    pub fn entry(&self, a: EntityCategory, b: EntityCategory) -> Option<&CacheEntry> {
        self.entries.get(&pair_key(a, b))
    }

    /// Inserts or replaces; returns the canonical annotation stored.
    pub fn insert(&mut self, annotation: RiskAnnotation, source: AnnotationSource) -> &RiskAnnotation {
        let annotation = annotation.canonicalize();
        let key = annotation.key();
        self.entries
            .insert(key.clone(), CacheEntry { annotation, source });
        &self.entries[&key].annotation
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CacheEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sets every annotation to `level`. Used for leakage checks.
    pub fn with_all_levels(&self, level: RiskLevel) -> Self {
        let mut out = self.clone();
        for e in out.entries.values_mut() {
            e.annotation.danger_level = level;
        }
        out
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cache serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotateError> {
        let cache: AnnotationCache =
            serde_json::from_str(text).map_err(|e| AnnotateError::CacheFormat(e.to_string()))?;
        for (k, e) in &cache.entries {
            if *k != e.annotation.key() {
                return Err(AnnotateError::CacheFormat(format!(
                    "key {k} does not match its annotation"
                )));
            }
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotateError> {
        std::fs::write(path, self.to_json_pretty())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AnnotateError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Produces raw annotation payloads; the [`Annotator`] validates them.
pub trait AnnotationBackend: Send + Sync {
    fn source(&self) -> AnnotationSource;
    fn query(&self, a: EntityCategory, b: EntityCategory) -> Result<String, AnnotateError>;
}

/// Cache-fronted annotation service. Reads are concurrent; each pair is sent
/// to the backend at most once even under concurrent callers.
pub struct Annotator<B> {
    backend: B,
    cache: RwLock<AnnotationCache>,
    pair_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl<B: AnnotationBackend> Annotator<B> {
    pub fn new(backend: B) -> Self {
        Self::with_cache(backend, AnnotationCache::new())
    }

    pub fn with_cache(backend: B, cache: AnnotationCache) -> Self {
        Annotator {
            backend,
            cache: RwLock::new(cache),
            pair_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn annotate_pair(
        &self,
        a: EntityCategory,
        b: EntityCategory,
    ) -> Result<RiskAnnotation, AnnotateError> {
        if let Some(hit) = self.cache.read().expect("cache lock").get(a, b) {
            return Ok(hit.clone());
        }
        let key = pair_key(a, b);
        let lock = self
            .pair_locks
            .lock()
            .expect("pair lock table")
            .entry(key)
            .or_default()
            .clone();
        let _guard = lock.lock().expect("pair lock");
        if let Some(hit) = self.cache.read().expect("cache lock").get(a, b) {
            return Ok(hit.clone());
        }
        let raw = self.backend.query(a, b)?;
        let ann = parse_annotation(&raw, a, b)?;
        let mut cache = self.cache.write().expect("cache lock");
        Ok(cache.insert(ann, self.backend.source()).clone())
    }

    /// Annotates all pairs with at most `parallelism` backend calls in flight.
    /// Returns the first error encountered, after all workers finish.
    pub fn annotate_all(
        &self,
        pairs: &[(EntityCategory, EntityCategory)],
        parallelism: usize,
    ) -> Result<(), AnnotateError> {
        let workers = parallelism.max(1).min(pairs.len().max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let first_error: Mutex<Option<AnnotateError>> = Mutex::new(None);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some(&(a, b)) = pairs.get(i) else { break };
                    if let Err(e) = self.annotate_pair(a, b) {
                        first_error.lock().expect("error slot").get_or_insert(e);
                    }
                });
            }
        });
        match first_error.into_inner().expect("error slot") {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn cache(&self) -> AnnotationCache {
        self.cache.read().expect("cache lock").clone()
    }

    pub fn into_cache(self) -> AnnotationCache {
        self.cache.into_inner().expect("cache lock")
    }
}

/// Every unordered category pair, self-pairs included.
pub fn all_category_pairs() -> Vec<(EntityCategory, EntityCategory)> {
    let all = EntityCategory::ALL;
    let mut out = Vec::new();
    for (i, &a) in all.iter().enumerate() {
        for &b in &all[i..] {
            out.push((a, b));
        }
    }
    out
}
