//! Risk-aware task planning for household robots.
//!
//! Scenes of typed entities are turned into spatio-semantic safety graphs,
//! an edge-risk graph transformer flags hazardous entity pairs, and a planner
//! revises task plans when hazards appear. Everything runs offline with
//! deterministic backends; LLM backends are optional and HTTP-based.

pub mod annotate;
pub mod episode;
pub mod eval;
pub mod graph;
pub mod llm;
pub mod model;
pub mod planner;
pub mod scene;
