//! Spatio-semantic safety graphs: proximity, danger scores, edge labels and
//! the numeric node/edge encodings fed to the edge classifier.
//!
//! Annotation values only ever reach `EdgeRecord::r`, `danger_score` and
//! `label`. The feature builders below never see the annotation cache.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{pair_key, AnnotationCache};
use crate::scene::{distance, Attribute, Entity, EntityCategory, Scene};

/// One-hot category, four hazard flags, agent flag, normalized position.
pub const D_NODE: usize = EntityCategory::COUNT + 4 + 1 + 3;
/// Distance, proximity, |displacement| (3) and nine interaction flags.
pub const D_EDGE: usize = 5 + 9;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid risk value {0}: expected 0.25, 0.5 or 1.0")]
    InvalidRiskValue(f64),
    #[error("spatial proximity must be positive, got {0}")]
    NonPositiveProximity(f64),
    #[error("no annotation for pair {0}")]
    MissingAnnotation(String),
    #[error("invalid graph config: {0}")]
    BadConfig(String),
    #[error("graph invariant violated in {graph}: {reason}")]
    Invariant { graph: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpMode {
    /// `1 / max(d, DT)`: bounded by `1/DT` everywhere.
    #[default]
    Clamped,
    /// `1 / max(d, eps)` inside DT and `1 / DT` beyond it, as the formula is printed.
    PaperLiteral,
}

impl std::str::FromStr for SpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "clamped" => Ok(SpMode::Clamped),
            "paper_literal" | "literal" => Ok(SpMode::PaperLiteral),
            other => Err(format!("unknown sp mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    #[default]
    Complete,
    /// Connect pairs no further apart than this many meters.
    Radius(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub dt: f64,
    pub sp_mode: SpMode,
    pub label_threshold: f64,
    pub edge_policy: EdgePolicy,
    pub epsilon: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            dt: 0.5,
            sp_mode: SpMode::Clamped,
            label_threshold: 1.0,
            edge_policy: EdgePolicy::Complete,
            epsilon: 1e-6,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::BadConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.label_threshold > 0.0) {
            return bad(format!(
                "label threshold must be > 0, got {}",
                self.label_threshold
            ));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if let EdgePolicy::Radius(r) = self.edge_policy {
            if !(r > 0.0) {
                return bad(format!("radius must be > 0, got {r}"));
            }
        }
        Ok(())
    }
}

pub fn spatial_proximity(distance: f64, config: &GraphConfig) -> f64 {
    debug_assert!(distance >= 0.0, "negative distance {distance}");
    match config.sp_mode {
        SpMode::Clamped => 1.0 / distance.max(config.dt),
        SpMode::PaperLiteral => {
            if distance <= config.dt {
                1.0 / distance.max(config.epsilon)
            } else {
                1.0 / config.dt
            }
        }
    }
}

/// `r × sp`, with `r` restricted to the three annotation levels.
pub fn danger_score(r: f64, sp: f64) -> Result<f64, GraphError> {
    if ![0.25, 0.5, 1.0].contains(&r) {
        return Err(GraphError::InvalidRiskValue(r));
    }
    if !(sp > 0.0) {
        return Err(GraphError::NonPositiveProximity(sp));
    }
    Ok(r * sp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub sp: f64,
    /// Label-side only; never part of `features`.
    pub r: f64,
    pub danger_score: f64,
    pub label: bool,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyGraph {
    pub scene_id: String,
    pub node_ids: Vec<String>,
    pub node_categories: Vec<EntityCategory>,
    pub node_features: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<bool>>,
    pub edges: Vec<EdgeRecord>,
}

impl SafetyGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.edges.iter().map(|e| e.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.edges.iter().filter(|e| e.label).count()
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<&EdgeRecord> {
        let ia = self.node_ids.iter().position(|id| id == a)?;
        let ib = self.node_ids.iter().position(|id| id == b)?;
        let (i, j) = (ia.min(ib), ia.max(ib));
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n_nodes();
        let fail = |reason: String| {
            Err(GraphError::Invariant {
                graph: self.scene_id.clone(),
                reason,
            })
        };
        if self.node_categories.len() != n || self.node_features.len() != n {
            return fail("node arrays disagree in length".into());
        }
        if self.node_features.iter().any(|x| x.len() != D_NODE) {
            return fail(format!("node feature width must be {D_NODE}"));
        }
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return fail("adjacency is not n×n".into());
        }
        for i in 0..n {
            if self.adjacency[i][i] {
                return fail(format!("self loop at {i}"));
            }
            for j in 0..n {
                if self.adjacency[i][j] != self.adjacency[j][i] {
                    return fail(format!("adjacency asymmetric at ({i}, {j})"));
                }
            }
        }
        let listed = self.adjacency.iter().flatten().filter(|&&a| a).count() / 2;
        if listed != self.edges.len() {
            return fail("edge list disagrees with adjacency".into());
        }
        for e in &self.edges {
            if e.i >= e.j || e.j >= n || !self.adjacency[e.i][e.j] {
                return fail(format!("bad edge ({}, {})", e.i, e.j));
            }
            if e.features.len() != D_EDGE {
                return fail(format!("edge feature width must be {D_EDGE}"));
            }
        }
        Ok(())
    }
}

pub fn node_features(entity: &Entity, room_size: [f64; 3]) -> Vec<f64> {
    let mut x = vec![0.0; D_NODE];
    x[entity.category.index()] = 1.0;
    let base = EntityCategory::COUNT;
    for (k, attr) in Attribute::HAZARDS.iter().enumerate() {
        if entity.has(*attr) {
            x[base + k] = 1.0;
        }
    }
    x[base + 4] = if entity.is_agent { 1.0 } else { 0.0 };
    for k in 0..3 {
        x[base + 5 + k] = entity.position[k] / room_size[k];
    }
    x
}

fn is_person_or_pet(e: &Entity) -> bool {
    e.is_agent && !e.category.is_robot()
}

/// Geometry plus attribute interaction flags for an unordered pair. Symmetric
/// in `(a, b)`.
pub fn edge_features(a: &Entity, b: &Entity, config: &GraphConfig) -> Vec<f64> {
    let d = distance(&a.position, &b.position);
    let mut f = Vec::with_capacity(D_EDGE);
    f.push(d);
    f.push(spatial_proximity(d, config));
    for k in 0..3 {
        f.push((a.position[k] - b.position[k]).abs());
    }
    let flag = |v: bool| if v { 1.0 } else { 0.0 };
    let agent_with =
        |attr: Attribute| (is_person_or_pet(a) && b.has(attr)) || (is_person_or_pet(b) && a.has(attr));
    for attr in Attribute::HAZARDS {
        f.push(flag(agent_with(attr)));
    }
    let vulnerable_near_hazard = (a.category.is_vulnerable() && b.is_hazard_source())
        || (b.category.is_vulnerable() && a.is_hazard_source());
    f.push(flag(vulnerable_near_hazard));
    let wet_live = (a.has(Attribute::WaterSource) && b.has(Attribute::Electrical))
        || (b.has(Attribute::WaterSource) && a.has(Attribute::Electrical));
    f.push(flag(wet_live && !a.is_agent && !b.is_agent));
    let same_dangerous_kind =
        a.category == b.category && !a.is_agent && (a.has(Attribute::Hot) || a.has(Attribute::Sharp));
    f.push(flag(same_dangerous_kind));
    f.push(flag(a.is_agent && b.is_agent));
    f.push(flag(a.category.is_robot() || b.category.is_robot()));
    debug_assert_eq!(f.len(), D_EDGE);
    f
}

pub fn build_graph(
    scene: &Scene,
    cache: &AnnotationCache,
    config: &GraphConfig,
) -> Result<SafetyGraph, GraphError> {
    config.validate()?;
    let n = scene.entities.len();
    let size = scene.size();
    let mut adjacency = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&scene.entities[i], &scene.entities[j]);
            let d = distance(&a.position, &b.position);
            if let EdgePolicy::Radius(r) = config.edge_policy {
                if d > r {
                    continue;
                }
            }
            let r = cache
                .get(a.category, b.category)
                .ok_or_else(|| GraphError::MissingAnnotation(pair_key(a.category, b.category)))?
                .danger_level
                .value();
            let sp = spatial_proximity(d, config);
            let s = danger_score(r, sp)?;
            adjacency[i][j] = true;
            adjacency[j][i] = true;
            edges.push(EdgeRecord {
                i,
                j,
                distance: d,
                sp,
                r,
                danger_score: s,
                label: s >= config.label_threshold,
                features: edge_features(a, b, config),
            });
        }
    }
    Ok(SafetyGraph {
        scene_id: scene.id.clone(),
        node_ids: scene.entities.iter().map(|e| e.id.clone()).collect(),
        node_categories: scene.entities.iter().map(|e| e.category).collect(),
        node_features: scene.entities.iter().map(|e| node_features(e, size)).collect(),
        adjacency,
        edges,
    })
}

pub fn build_graphs(
    scenes: &[Scene],
    cache: &AnnotationCache,
    config: &GraphConfig,
) -> Result<Vec<SafetyGraph>, GraphError> {
    scenes.iter().map(|s| build_graph(s, cache, config)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub edges: usize,
    pub positives: usize,
    /// Fraction in `[0, 1]`; zero when there are no edges.
    pub positive_rate: f64,
}

pub fn label_stats<'a>(graphs: impl IntoIterator<Item = &'a SafetyGraph>) -> LabelStats {
    let (mut edges, mut positives) = (0, 0);
    for g in graphs {
        edges += g.edges.len();
        positives += g.positives();
    }
    LabelStats::from_counts(edges, positives)
}

impl LabelStats {
    pub fn from_counts(edges: usize, positives: usize) -> Self {
        let positive_rate = if edges == 0 {
            0.0
        } else {
            positives as f64 / edges as f64
        };
        LabelStats {
            edges,
            positives,
            positive_rate,
        }
    }
}

pub fn write_graphs_jsonl<W: Write>(mut w: W, graphs: &[SafetyGraph]) -> std::io::Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_graphs_jsonl<R: BufRead>(r: R) -> std::io::Result<Vec<SafetyGraph>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
