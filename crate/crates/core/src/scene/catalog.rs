//! Closed entity catalog: categories, static hazard attributes and per-room
//! object pools. The data lives in `data/catalog.json`; the enum below is the
//! typed view of it and the two are checked against each other at load time.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RoomType;

const CATALOG_JSON: &str = include_str!("../../data/catalog.json");

const NAMES: [&str; EntityCategory::COUNT] = [
    "Knife",
    "Scissors",
    "Kettle",
    "StoveBurner",
    "Oven",
    "Toaster",
    "Microwave",
    "Pan",
    "Candle",
    "HairDryer",
    "Television",
    "Lamp",
    "Fridge",
    "Sink",
    "Bathtub",
    "Toilet",
    "CuttingBoard",
    "Apple",
    "Bread",
    "Egg",
    "Tomato",
    "Plate",
    "Mug",
    "Sofa",
    "Bed",
    "Book",
    "Pillow",
    "Towel",
    "Baby",
    "Adult",
    "Pet",
    "Robot",
];

/// Entity kinds. Serialized names are stable and versioned with the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityCategory {
    Knife,
    Scissors,
    Kettle,
    StoveBurner,
    Oven,
    Toaster,
    Microwave,
    Pan,
    Candle,
    HairDryer,
    Television,
    Lamp,
    Fridge,
    Sink,
    Bathtub,
    Toilet,
    CuttingBoard,
    Apple,
    Bread,
    Egg,
    Tomato,
    Plate,
    Mug,
    Sofa,
    Bed,
    Book,
    Pillow,
    Towel,
    Baby,
    Adult,
    Pet,
    Robot,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 32] = [
        Self::Knife,
        Self::Scissors,
        Self::Kettle,
        Self::StoveBurner,
        Self::Oven,
        Self::Toaster,
        Self::Microwave,
        Self::Pan,
        Self::Candle,
        Self::HairDryer,
        Self::Television,
        Self::Lamp,
        Self::Fridge,
        Self::Sink,
        Self::Bathtub,
        Self::Toilet,
        Self::CuttingBoard,
        Self::Apple,
        Self::Bread,
        Self::Egg,
        Self::Tomato,
        Self::Plate,
        Self::Mug,
        Self::Sofa,
        Self::Bed,
        Self::Book,
        Self::Pillow,
        Self::Towel,
        Self::Baby,
        Self::Adult,
        Self::Pet,
        Self::Robot,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Position in [`EntityCategory::ALL`]; used for one-hot encodings.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn agent_class(self) -> Option<AgentClass> {
        catalog().info(self).agent
    }

    pub fn is_agent(self) -> bool {
        self.agent_class().is_some()
    }

    /// Baby and Pet: agents whose proximity to hazards is itself the risk.
    pub fn is_vulnerable(self) -> bool {
        self.agent_class() == Some(AgentClass::Vulnerable)
    }

    pub fn is_robot(self) -> bool {
        self == Self::Robot
    }

    pub fn static_attributes(self) -> &'static [Attribute] {
        &catalog().info(self).attributes
    }

    pub fn has_static(self, attr: Attribute) -> bool {
        self.static_attributes().contains(&attr)
    }

    pub fn is_hazard_source(self) -> bool {
        self.static_attributes().iter().any(|a| a.is_hazard())
    }

    pub fn is_movable(self) -> bool {
        catalog().info(self).movable
    }

    pub fn is_food(self) -> bool {
        catalog().info(self).food
    }

    fn normalized(s: &str) -> String {
        s.chars()
            .filter(|c| !matches!(c, '_' | ' ' | '-'))
            .flat_map(char::to_lowercase)
            .collect()
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown entity category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for EntityCategory {
    type Err = UnknownCategory;

    /// Case- and separator-insensitive; accepts a few natural-language aliases
    /// ("child", "stove", "dog", ...) that show up in plans and rule files.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = Self::normalized(s);
        let alias = match key.as_str() {
            "child" | "kid" | "toddler" | "infant" => Some(Self::Baby),
            "stove" | "burner" | "cooktop" => Some(Self::StoveBurner),
            "dog" | "cat" => Some(Self::Pet),
            "person" | "human" | "parent" => Some(Self::Adult),
            "tv" => Some(Self::Television),
            "bath" | "tub" => Some(Self::Bathtub),
            _ => None,
        };
        if let Some(c) = alias {
            return Ok(c);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|c| Self::normalized(c.name()) == key)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

/// Entity flags. The first four are static hazard attributes from the
/// catalog; the rest are simulator state toggled by actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Hot,
    Sharp,
    Electrical,
    WaterSource,
    Open,
    Held,
    Active,
}

impl Attribute {
    pub const HAZARDS: [Attribute; 4] = [
        Attribute::Hot,
        Attribute::Sharp,
        Attribute::Electrical,
        Attribute::WaterSource,
    ];

    pub fn is_hazard(self) -> bool {
        Self::HAZARDS.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Hot => "hot",
            Attribute::Sharp => "sharp",
            Attribute::Electrical => "electrical",
            Attribute::WaterSource => "water_source",
            Attribute::Open => "open",
            Attribute::Held => "held",
            Attribute::Active => "active",
        }
    }
}

impl FromStr for Attribute {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        [
            Attribute::Hot,
            Attribute::Sharp,
            Attribute::Electrical,
            Attribute::WaterSource,
            Attribute::Open,
            Attribute::Held,
            Attribute::Active,
        ]
        .into_iter()
        .find(|a| a.as_str() == lower)
        .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vulnerable,
    Adult,
    Planner,
}

#[derive(Debug, Clone)]
pub struct CategoryInfo {
    pub attributes: Vec<Attribute>,
    pub movable: bool,
    pub food: bool,
    pub agent: Option<AgentClass>,
}

#[derive(Debug, Clone)]
pub struct RoomInfo {
    pub room_type: RoomType,
    /// Width (x), depth (y), height (z) in meters.
    pub size: [f64; 3],
    pub fixtures: Vec<EntityCategory>,
    pub extras: Vec<EntityCategory>,
    pub injection_targets: Vec<EntityCategory>,
}

#[derive(Debug)]
pub struct Catalog {
    pub version: String,
    /// sha256 of the catalog data file, hex encoded.
    pub hash: String,
    categories: Vec<CategoryInfo>,
    rooms: Vec<RoomInfo>,
}

impl Catalog {
    pub fn info(&self, c: EntityCategory) -> &CategoryInfo {
        &self.categories[c.index()]
    }

    pub fn room(&self, room: RoomType) -> &RoomInfo {
        self.rooms
            .iter()
            .find(|r| r.room_type == room)
            .expect("every room type is present in the catalog")
    }
}

#[derive(Deserialize)]
struct RawCatalog {
    version: String,
    categories: Vec<RawCategory>,
    rooms: Vec<RawRoom>,
}

#[derive(Deserialize)]
struct RawCategory {
    kind: EntityCategory,
    attributes: Vec<Attribute>,
    movable: bool,
    #[serde(default)]
    food: bool,
    #[serde(default)]
    agent: Option<AgentClass>,
}

#[derive(Deserialize)]
struct RawRoom {
    room_type: RoomType,
    size: [f64; 3],
    fixtures: Vec<EntityCategory>,
    extras: Vec<EntityCategory>,
    injection_targets: Vec<EntityCategory>,
}

fn load() -> Catalog {
    let raw: RawCatalog = serde_json::from_str(CATALOG_JSON).expect("embedded catalog.json is valid");
    assert_eq!(
        raw.categories.len(),
        EntityCategory::COUNT,
        "catalog.json must list every category exactly once"
    );
    let mut categories = Vec::with_capacity(EntityCategory::COUNT);
    for (i, (rc, c)) in raw.categories.into_iter().zip(EntityCategory::ALL).enumerate() {
        assert_eq!(rc.kind, c, "catalog.json category {i} out of order");
        assert!(rc.attributes.iter().all(|a| a.is_hazard()));
        let mut attributes = rc.attributes;
        attributes.sort();
        categories.push(CategoryInfo {
            attributes,
            movable: rc.movable,
            food: rc.food,
            agent: rc.agent,
        });
    }
    let planners = categories
        .iter()
        .filter(|c| c.agent == Some(AgentClass::Planner))
        .count();
    assert_eq!(planners, 1, "exactly one planning agent kind");

    let rooms = raw
        .rooms
        .into_iter()
        .map(|r| RoomInfo {
            room_type: r.room_type,
            size: r.size,
            fixtures: r.fixtures,
            extras: r.extras,
            injection_targets: r.injection_targets,
        })
        .collect();
    Catalog {
        version: raw.version,
        hash: hex::encode(Sha256::digest(CATALOG_JSON.as_bytes())),
        categories,
        rooms,
    }
}

pub fn catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(load)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_is_consistent() {
        let cat = catalog();
        assert_eq!(cat.version, "catalog-v1");
        assert_eq!(cat.hash.len(), 64);
        for room in RoomType::ALL {
            let info = cat.room(room);
            assert!(info.size.iter().all(|&s| s > 0.0));
            assert!(info.injection_targets.iter().all(|c| c.is_hazard_source()));
        }
    }

    #[test]
    fn only_robot_plans() {
        let planners: Vec<_> = EntityCategory::ALL
            .into_iter()
            .filter(|c| c.agent_class() == Some(AgentClass::Planner))
            .collect();
        assert_eq!(planners, vec![EntityCategory::Robot]);
    }

    #[test]
    fn parses_names_and_aliases() {
        assert_eq!("Knife".parse::<EntityCategory>(), Ok(EntityCategory::Knife));
        assert_eq!("stove_burner".parse(), Ok(EntityCategory::StoveBurner));
        assert_eq!("child".parse(), Ok(EntityCategory::Baby));
        assert_eq!("HAIR DRYER".parse(), Ok(EntityCategory::HairDryer));
        assert!("Spaceship".parse::<EntityCategory>().is_err());
        for c in EntityCategory::ALL {
            assert_eq!(c.name().parse(), Ok(c));
            assert_eq!(serde_json::to_value(c).unwrap(), c.name());
        }
    }

    #[test]
    fn kettle_is_hot_wet_and_electrical() {
        let k = EntityCategory::Kettle;
        assert!(k.has_static(Attribute::Hot));
        assert!(k.has_static(Attribute::WaterSource));
        assert!(k.has_static(Attribute::Electrical));
    }
}
