use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    catalog, distance, AgentPolicy, DatasetSplit, Entity, EntityCategory, Position, RoomType, Scene,
    SceneError, SceneSpec, DEFAULT_MAX_ENTITIES,
};

/// Hazard-attributed objects are never spawned inside the floor square
/// `[0, SAFE_ZONE_EXTENT]^2`; agents moved to safety are parked there.
pub const SAFE_ZONE_EXTENT: f64 = 1.5;

/// Height of the storage shelf along the far wall used for secured objects.
pub const SHELF_HEIGHT: f64 = 1.8;

const RANDOM_AGENTS: [EntityCategory; 3] = [EntityCategory::Baby, EntityCategory::Adult, EntityCategory::Pet];

fn snake(name: &str) -> String {
    let mut out = String::new();
    for (i, ch) in name.chars().enumerate() {
        if ch.is_ascii_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.push(ch.to_ascii_lowercase());
        } else {
            out.push(ch);
        }
    }
    out
}

struct Builder {
    counters: BTreeMap<EntityCategory, usize>,
    entities: Vec<Entity>,
}

impl Builder {
    fn push(&mut self, category: EntityCategory, position: Position) -> usize {
        let k = self.counters.entry(category).or_insert(0);
        let id = format!("{}_{}", snake(category.name()), k);
        *k += 1;
        self.entities.push(Entity::new(id, category, position));
        self.entities.len() - 1
    }
}

fn in_safe_zone(p: &Position) -> bool {
    p[0] < SAFE_ZONE_EXTENT && p[1] < SAFE_ZONE_EXTENT
}

fn uniform_floor(rng: &mut ChaCha8Rng, size: [f64; 3]) -> Position {
    [rng.random::<f64>() * size[0], rng.random::<f64>() * size[1], 0.0]
}

/// Immovable fixtures keep at least this far apart, so that every hazardous
/// pair has an endpoint that can be moved away.
pub const FIXTURE_SPACING: f64 = 0.6;

fn place_object(
    rng: &mut ChaCha8Rng,
    size: [f64; 3],
    category: EntityCategory,
    fixtures: &[Position],
) -> Position {
    let acceptable = |p: &Position| {
        !(category.is_hazard_source() && in_safe_zone(p))
            && (category.is_movable() || fixtures.iter().all(|f| distance(f, p) >= FIXTURE_SPACING))
    };
    let mut p = uniform_floor(rng, size);
    let mut tries = 0;
    while !acceptable(&p) && tries < 256 {
        p = uniform_floor(rng, size);
        tries += 1;
    }
    p
}

fn inside(p: &Position, size: [f64; 3]) -> bool {
    p.iter().zip(size).all(|(&v, s)| (0.0..=s).contains(&v))
}

/// Position at distance Uniform(0.1·dt, 0.9·dt) from `anchor`, inside the room.
fn place_near(rng: &mut ChaCha8Rng, size: [f64; 3], anchor: Position, dt: f64) -> Position {
    let r = dt * (0.1 + 0.8 * rng.random::<f64>());
    for _ in 0..64 {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let p = [anchor[0] + r * theta.cos(), anchor[1] + r * theta.sin(), 0.0];
        if inside(&p, size) {
            return p;
        }
    }
    // toward the room center always stays inside for r < half the room
    let c = [size[0] / 2.0, size[1] / 2.0];
    let (dx, dy) = (c[0] - anchor[0], c[1] - anchor[1]);
    let norm = (dx * dx + dy * dy).sqrt().max(1e-9);
    [anchor[0] + r * dx / norm, anchor[1] + r * dy / norm, 0.0]
}

/// Generates one scene. A pure function of `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SceneError> {
    spec.validate()?;
    let room = catalog().room(spec.room_type);
    let size = room.size;
    let (fixtures, extras, targets): (Vec<_>, Vec<_>, Vec<_>) = match &spec.object_pool {
        Some(pool) => (
            Vec::new(),
            pool.clone(),
            pool.iter().copied().filter(|c| c.is_hazard_source()).collect(),
        ),
        None => (
            room.fixtures.clone(),
            room.extras.clone(),
            room.injection_targets.clone(),
        ),
    };
    if spec.agent_policy == AgentPolicy::NearHazard && targets.is_empty() {
        return Err(SceneError::NoHazardSource(spec.room_type));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_objects = rng.random_range(spec.object_count.0..=spec.object_count.1);
    let mut kinds: Vec<EntityCategory> = fixtures.iter().copied().take(n_objects).collect();
    while kinds.len() < n_objects {
        kinds.push(*extras.choose(&mut rng).expect("pool nonempty"));
    }

    let inject =
        spec.agent_policy == AgentPolicy::NearHazard && rng.random::<f64>() < spec.hazard_probability;
    if inject && !kinds.iter().any(|k| targets.contains(k)) {
        let forced = *targets.choose(&mut rng).expect("targets nonempty");
        // replace the last extra if there is one, otherwise append
        if kinds.len() > fixtures.len() {
            *kinds.last_mut().expect("nonempty") = forced;
        } else {
            kinds.push(forced);
        }
    }

    let mut b = Builder {
        counters: BTreeMap::new(),
        entities: Vec::new(),
    };
    let robot_pos = uniform_floor(&mut rng, size);
    b.push(EntityCategory::Robot, robot_pos);
    let mut fixed: Vec<Position> = Vec::new();
    for &k in &kinds {
        let p = place_object(&mut rng, size, k, &fixed);
        if !k.is_movable() {
            fixed.push(p);
        }
        b.push(k, p);
    }

    let random_agents = match spec.agent_policy {
        AgentPolicy::None => 0,
        AgentPolicy::Random => rng.random_range(1..=2),
        AgentPolicy::NearHazard if inject => rng.random_range(0..=1),
        AgentPolicy::NearHazard => rng.random_range(1..=2),
    };
    if inject {
        let anchors: Vec<Position> = b
            .entities
            .iter()
            .filter(|e| targets.contains(&e.category))
            .map(|e| e.position)
            .collect();
        let anchor = *anchors.choose(&mut rng).expect("a target was ensured");
        let p = place_near(&mut rng, size, anchor, spec.dt);
        debug_assert!(distance(&p, &anchor) <= spec.dt);
        b.push(EntityCategory::Baby, p);
    }
    for _ in 0..random_agents {
        let kind = *RANDOM_AGENTS.choose(&mut rng).expect("nonempty");
        let p = uniform_floor(&mut rng, size);
        b.push(kind, p);
    }

    let scene = Scene {
        id: format!("{}-{:016x}", spec.room_type, seed),
        room_type: spec.room_type,
        entities: b.entities,
        hazard_injected: inject,
        rng_seed: seed,
    };
    scene.validate(spec.max_entities)?;
    Ok(scene)
}

/// Knobs for dataset generation; the object range controls edge density and
/// therefore the positive-edge rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dt: f64,
    /// Objects added on top of the room's fixture list, inclusive range.
    pub extra_objects: (usize, usize),
    pub max_entities: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            dt: 0.5,
            extra_objects: (6, 12),
            max_entities: DEFAULT_MAX_ENTITIES,
        }
    }
}

impl DatasetConfig {
    pub fn spec(&self, room: RoomType, inject: bool) -> SceneSpec {
        let base = catalog().room(room).fixtures.len();
        SceneSpec {
            room_type: room,
            object_count: (base + self.extra_objects.0, base + self.extra_objects.1),
            agent_policy: if inject {
                AgentPolicy::NearHazard
            } else {
                AgentPolicy::Random
            },
            hazard_probability: 1.0,
            dt: self.dt,
            max_entities: self.max_entities,
            object_pool: None,
        }
    }
}

pub fn generate_dataset(
    n_scenes: usize,
    split: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplit, SceneError> {
    generate_dataset_with(&DatasetConfig::default(), n_scenes, split, seed)
}

/// Rooms cycle over the four types; injection alternates so that exactly half
/// the scenes (and half of each room type, for multiples of eight) carry an
/// injected hazard. Scene order is shuffled from `seed` before splitting.
pub fn generate_dataset_with(
    config: &DatasetConfig,
    n_scenes: usize,
    split: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplit, SceneError> {
    if split.0 + split.1 + split.2 != n_scenes {
        return Err(SceneError::BadSplit { n_scenes, split });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let room = RoomType::ALL[i % 4];
        let inject = ((i % 4) + (i / 4)) % 2 == 0;
        let scene_seed: u64 = rng.random();
        let mut scene = generate_scene(&config.spec(room, inject), scene_seed)?;
        scene.id = format!("scene-{i:04}");
        scenes.push(scene);
    }
    let mut order: Vec<usize> = (0..n_scenes).collect();
    order.shuffle(&mut rng);
    let take = |n: usize, from: &mut std::slice::Iter<'_, usize>| -> Vec<Scene> {
        let mut v: Vec<usize> = from.by_ref().take(n).copied().collect();
        v.sort_unstable();
        v.into_iter().map(|i| scenes[i].clone()).collect()
    };
    let mut it = order.iter();
    let train = take(split.0, &mut it);
    let val = take(split.1, &mut it);
    let test = take(split.2, &mut it);
    Ok(DatasetSplit { train, val, test })
}

/// `n` hazard-injected scenes of one room type, seeds drawn from `seed`.
pub fn hazard_scenes(
    config: &DatasetConfig,
    room: RoomType,
    n: usize,
    seed: u64,
) -> Result<Vec<Scene>, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut s = generate_scene(&config.spec(room, true), rng.random())?;
            s.id = format!("{}-{i:02}", room.as_str());
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Attribute;
    use std::collections::HashSet;

    #[test]
    fn kitchen_near_hazard_seed_7_puts_baby_by_knife_or_stove() {
        let spec = SceneSpec::new(RoomType::Kitchen).with_policy(AgentPolicy::NearHazard);
        let scene = generate_scene(&spec, 7).unwrap();
        assert!(scene.hazard_injected);
        let baby = scene.of_category(EntityCategory::Baby).next().unwrap();
        let close = scene.entities.iter().any(|e| {
            matches!(e.category, EntityCategory::Knife | EntityCategory::StoveBurner)
                && distance(&e.position, &baby.position) <= spec.dt
        });
        assert!(close, "{}", scene.summary());
    }

    #[test]
    fn policy_none_leaves_only_the_robot() {
        for seed in 0..20 {
            let spec = SceneSpec::new(RoomType::LivingRoom).with_policy(AgentPolicy::None);
            let scene = generate_scene(&spec, seed).unwrap();
            let agents: Vec<_> = scene.entities.iter().filter(|e| e.is_agent).collect();
            assert_eq!(agents.len(), 1);
            assert_eq!(agents[0].category, EntityCategory::Robot);
            assert!(!scene.hazard_injected);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SceneSpec::new(RoomType::Bathroom).with_policy(AgentPolicy::NearHazard);
        let a = serde_json::to_string(&generate_scene(&spec, 99).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scene(&spec, 99).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_hazard_source_is_an_error() {
        let mut spec = SceneSpec::new(RoomType::Bedroom).with_policy(AgentPolicy::NearHazard);
        spec.object_pool = Some(vec![EntityCategory::Pillow, EntityCategory::Book]);
        spec.object_count = (2, 4);
        assert_eq!(
            generate_scene(&spec, 1),
            Err(SceneError::NoHazardSource(RoomType::Bedroom))
        );
        // a pool with a hazard works and injects next to it
        spec.object_pool = Some(vec![EntityCategory::Pillow, EntityCategory::Candle]);
        let s = generate_scene(&spec, 1).unwrap();
        assert!(s.hazard_injected);
        assert!(s.of_category(EntityCategory::Candle).next().is_some());
    }

    #[test]
    fn hazards_avoid_the_safe_zone() {
        for seed in 0..50 {
            let spec = SceneSpec::new(RoomType::Kitchen);
            let s = generate_scene(&spec, seed).unwrap();
            for e in s.entities.iter().filter(|e| !e.is_agent && e.is_hazard_source()) {
                assert!(!in_safe_zone(&e.position), "{} in safe zone", e.id);
                assert!(e.has(Attribute::Hot) || e.is_hazard_source());
            }
        }
    }

    #[test]
    fn dataset_protocol_120() {
        let d = generate_dataset(120, (90, 15, 15), 1).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (90, 15, 15));
        let injected = d.all().filter(|s| s.hazard_injected).count();
        assert_eq!(injected, 60);
        let ids: HashSet<_> = d.all().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 120);
        for room in RoomType::ALL {
            assert_eq!(d.all().filter(|s| s.room_type == room).count(), 30);
        }
    }

    #[test]
    fn dataset_of_four_cycles_rooms() {
        let d = generate_dataset(4, (2, 1, 1), 0).unwrap();
        let rooms: HashSet<_> = d.all().map(|s| s.room_type).collect();
        assert_eq!(rooms.len(), 4);
        assert_eq!(d.all().filter(|s| s.hazard_injected).count(), 2);
    }

    #[test]
    fn bad_split() {
        assert!(matches!(
            generate_dataset(10, (5, 3, 3), 0),
            Err(SceneError::BadSplit { .. })
        ));
    }

    #[test]
    fn snake_ids() {
        assert_eq!(snake("StoveBurner"), "stove_burner");
        assert_eq!(snake("Knife"), "knife");
    }
}
