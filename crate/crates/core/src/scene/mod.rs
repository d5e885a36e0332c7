//! Household scenes: typed entities placed in a single room, plus the seeded
//! generator that produces the synthetic risk dataset.

mod catalog;
mod generate;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use catalog::{catalog, AgentClass, Attribute, Catalog, EntityCategory, RoomInfo, UnknownCategory};
pub use generate::{
    generate_dataset, generate_dataset_with, generate_scene, hazard_scenes, DatasetConfig, FIXTURE_SPACING,
    SAFE_ZONE_EXTENT, SHELF_HEIGHT,
};

/// Default upper bound on entities per scene.
pub const DEFAULT_MAX_ENTITIES: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("no hazard-attributed object available for {0}")]
    NoHazardSource(RoomType),
    #[error("split {split:?} does not sum to {n_scenes}")]
    BadSplit {
        n_scenes: usize,
        split: (usize, usize, usize),
    },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("scene {scene} violates invariant: {reason}")]
    Invariant { scene: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    Kitchen,
    LivingRoom,
    Bedroom,
    Bathroom,
}

impl RoomType {
    pub const ALL: [RoomType; 4] = [
        RoomType::Kitchen,
        RoomType::LivingRoom,
        RoomType::Bedroom,
        RoomType::Bathroom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoomType::Kitchen => "kitchen",
            RoomType::LivingRoom => "living_room",
            RoomType::Bedroom => "bedroom",
            RoomType::Bathroom => "bathroom",
        }
    }

    /// Room extent (x, y, z) in meters.
    pub fn size(self) -> [f64; 3] {
        catalog().room(self).size
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoomType {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | ' ' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        RoomType::ALL
            .into_iter()
            .find(|r| r.as_str().replace('_', "") == key)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

pub type Position = [f64; 3];

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub category: EntityCategory,
    /// Meters, inside the room box with the origin at one floor corner.
    pub position: Position,
    pub is_agent: bool,
    #[serde(default)]
    pub attributes: BTreeSet<Attribute>,
}

impl Entity {
    pub fn new(id: impl Into<String>, category: EntityCategory, position: Position) -> Self {
        Entity {
            id: id.into(),
            category,
            position,
            is_agent: category.is_agent(),
            attributes: category.static_attributes().iter().copied().collect(),
        }
    }

    pub fn has(&self, attr: Attribute) -> bool {
        self.attributes.contains(&attr)
    }

    pub fn is_hazard_source(&self) -> bool {
        self.attributes.iter().any(|a| a.is_hazard())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub room_type: RoomType,
    pub entities: Vec<Entity>,
    pub hazard_injected: bool,
    pub rng_seed: u64,
}

impl Scene {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entity_mut(&mut self, id: &str) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.id == id)
    }

    pub fn robot(&self) -> Option<&Entity> {
        self.entities.iter().find(|e| e.category.is_robot())
    }

    pub fn of_category(&self, c: EntityCategory) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.category == c)
    }

    pub fn size(&self) -> [f64; 3] {
        self.room_type.size()
    }

    pub fn validate(&self, max_entities: usize) -> Result<(), SceneError> {
        let fail = |reason: String| SceneError::Invariant {
            scene: self.id.clone(),
            reason,
        };
        let n = self.entities.len();
        if n < 2 || n > max_entities {
            return Err(fail(format!("entity count {n} outside [2, {max_entities}]")));
        }
        let mut seen = HashSet::new();
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return Err(fail(format!("duplicate entity id {}", e.id)));
            }
            if e.is_agent != e.category.is_agent() {
                return Err(fail(format!("is_agent mismatch on {}", e.id)));
            }
            let size = self.size();
            for (k, (&p, &s)) in e.position.iter().zip(&size).enumerate() {
                if !p.is_finite() || p < 0.0 || p > s {
                    return Err(fail(format!("{} coordinate {k} = {p} out of room", e.id)));
                }
            }
        }
        let robots = self.entities.iter().filter(|e| e.category.is_robot()).count();
        if robots != 1 {
            return Err(fail(format!("{robots} robot entities")));
        }
        Ok(())
    }

    /// Stable hash of the sorted entity states; 16 hex chars.
    pub fn digest(&self) -> String {
        let mut entities: Vec<&Entity> = self.entities.iter().collect();
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        let bytes = serde_json::to_vec(&entities).expect("entities serialize");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Plain-text listing handed to planners.
    pub fn summary(&self) -> String {
        let mut out = format!("Room: {}\n", self.room_type);
        for e in &self.entities {
            let attrs: Vec<&str> = e.attributes.iter().map(|a| a.as_str()).collect();
            out.push_str(&format!(
                "- {} ({}) at ({:.2}, {:.2}, {:.2})",
                e.id, e.category, e.position[0], e.position[1], e.position[2]
            ));
            if !attrs.is_empty() {
                out.push_str(&format!(" [{}]", attrs.join(", ")));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentPolicy {
    None,
    Random,
    NearHazard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_type: RoomType,
    /// Inclusive range of non-agent objects.
    pub object_count: (usize, usize),
    pub agent_policy: AgentPolicy,
    pub hazard_probability: f64,
    /// Distance threshold used for hazard injection, meters.
    pub dt: f64,
    pub max_entities: usize,
    /// Replaces the room's catalog pool when set.
    #[serde(default)]
    pub object_pool: Option<Vec<EntityCategory>>,
}

impl SceneSpec {
    pub fn new(room_type: RoomType) -> Self {
        let min = catalog().room(room_type).fixtures.len().max(6);
        SceneSpec {
            room_type,
            object_count: (min, min + 6),
            agent_policy: AgentPolicy::Random,
            hazard_probability: 1.0,
            dt: 0.5,
            max_entities: DEFAULT_MAX_ENTITIES,
            object_pool: None,
        }
    }

    pub fn with_policy(mut self, policy: AgentPolicy) -> Self {
        self.agent_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let (lo, hi) = self.object_count;
        if lo == 0 || lo > hi {
            return Err(SceneError::InvalidSpec(format!(
                "object count range ({lo}, {hi}) is empty"
            )));
        }
        // robot + up to three other agents
        if hi + 4 > self.max_entities {
            return Err(SceneError::InvalidSpec(format!(
                "object count {hi} exceeds max entities {}",
                self.max_entities
            )));
        }
        if !(0.0..=1.0).contains(&self.hazard_probability) {
            return Err(SceneError::InvalidSpec(format!(
                "hazard probability {} outside [0, 1]",
                self.hazard_probability
            )));
        }
        if !(self.dt > 0.0) {
            return Err(SceneError::InvalidSpec(format!("dt {} must be > 0", self.dt)));
        }
        if matches!(&self.object_pool, Some(p) if p.is_empty() || p.iter().any(|c| c.is_agent())) {
            return Err(SceneError::InvalidSpec(
                "object pool must be nonempty and agent-free".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &Scene> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// JSON Lines: one scene per line.
pub fn write_scenes_jsonl<W: std::io::Write>(mut w: W, scenes: &[Scene]) -> std::io::Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scenes_jsonl<R: std::io::BufRead>(r: R) -> std::io::Result<Vec<Scene>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> Scene {
        Scene {
            id: "t".into(),
            room_type: RoomType::Kitchen,
            entities: vec![
                Entity::new("robot_0", EntityCategory::Robot, [1.0, 1.0, 0.0]),
                Entity::new("knife_0", EntityCategory::Knife, [2.0, 1.0, 0.0]),
            ],
            hazard_injected: false,
            rng_seed: 0,
        }
    }

    #[test]
    fn validate_catches_duplicates_and_bounds() {
        let mut s = tiny_scene();
        assert!(s.validate(DEFAULT_MAX_ENTITIES).is_ok());
        s.entities[1].id = "robot_0".into();
        assert!(s.validate(DEFAULT_MAX_ENTITIES).is_err());
        let mut s = tiny_scene();
        s.entities[1].position[0] = 9.0;
        assert!(s.validate(DEFAULT_MAX_ENTITIES).is_err());
        let mut s = tiny_scene();
        s.entities.remove(0);
        assert!(s.validate(DEFAULT_MAX_ENTITIES).is_err());
    }

    #[test]
    fn digest_ignores_entity_order() {
        let a = tiny_scene();
        let mut b = a.clone();
        b.entities.reverse();
        assert_eq!(a.digest(), b.digest());
        b.entities[0].position[0] += 0.1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn room_type_parses() {
        assert_eq!("living_room".parse(), Ok(RoomType::LivingRoom));
        assert_eq!("Living Room".parse(), Ok(RoomType::LivingRoom));
        assert!("garage".parse::<RoomType>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = SceneSpec::new(RoomType::Bedroom);
        assert!(spec.validate().is_ok());
        spec.object_count = (5, 4);
        assert!(spec.validate().is_err());
        let mut spec = SceneSpec::new(RoomType::Bedroom);
        spec.hazard_probability = 1.5;
        assert!(spec.validate().is_err());
    }
}
