//! Discrete scene simulator: each plan action is one state transition.
//!
//! Manipulating actions first bring the robot next to their target. Held
//! objects ride with the robot. Agents moved to safety are parked on the
//! floor near the origin corner, which never contains hazard sources at
//! generation time; secured objects go to a shelf along the far wall.

use super::EpisodeError;
use crate::planner::{Action, Verb};
use crate::scene::{distance, Attribute, Entity, EntityCategory, Position, Scene, SHELF_HEIGHT};

/// Robot stand-off from the target of Walk and manipulation actions.
pub const REACH: f64 = 0.3;
/// Height at which held objects travel.
const CARRY_HEIGHT: f64 = 1.0;
/// Extra clearance beyond `2 * dt` required of a parking spot.
const PARKING_MARGIN: f64 = 0.05;
/// Spacing between shelf slots; larger than every non-vulnerable hazard radius.
pub const SHELF_SLOT: f64 = 0.6;
const PARKING_SPOTS: [[f64; 2]; 3] = [[0.3, 0.3], [0.5, 0.3], [0.3, 0.5]];

fn infeasible(action: &Action, reason: impl Into<String>) -> EpisodeError {
    EpisodeError::ActionInfeasible {
        action: action.phrase(),
        reason: reason.into(),
    }
}

/// Entity indices an argument names: an exact id, else every entity of a
/// named category.
pub fn resolve(scene: &Scene, name: &str) -> Vec<usize> {
    if let Some(i) = scene
        .entities
        .iter()
        .position(|e| e.id.eq_ignore_ascii_case(name))
    {
        return vec![i];
    }
    match name.parse::<EntityCategory>() {
        Ok(c) => scene
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.category == c)
            .map(|(i, _)| i)
            .collect(),
        Err(_) => Vec::new(),
    }
}

fn resolve_one(scene: &Scene, action: &Action, k: usize) -> Result<usize, EpisodeError> {
    let name = action
        .args
        .get(k)
        .ok_or_else(|| infeasible(action, "missing argument"))?;
    resolve(scene, name)
        .first()
        .copied()
        .ok_or_else(|| infeasible(action, format!("no entity named `{name}`")))
}

fn robot_index(scene: &Scene, action: &Action) -> Result<usize, EpisodeError> {
    scene
        .entities
        .iter()
        .position(|e| e.category.is_robot())
        .ok_or_else(|| infeasible(action, "scene has no robot"))
}

fn clamp_inside(p: [f64; 2], size: [f64; 3]) -> [f64; 2] {
    [p[0].clamp(0.0, size[0]), p[1].clamp(0.0, size[1])]
}

/// Moves the robot `REACH` from `target` on the floor, on the side facing the
/// room center, and carries held objects along.
fn approach(scene: &mut Scene, robot: usize, target: Position) {
    let size = scene.size();
    let c = [size[0] / 2.0, size[1] / 2.0];
    let (dx, dy) = (c[0] - target[0], c[1] - target[1]);
    let norm = (dx * dx + dy * dy).sqrt();
    let (ux, uy) = if norm < 1e-9 {
        (1.0, 0.0)
    } else {
        (dx / norm, dy / norm)
    };
    let p = clamp_inside([target[0] + REACH * ux, target[1] + REACH * uy], size);
    let pos = [p[0], p[1], 0.0];
    scene.entities[robot].position = pos;
    let carry = [pos[0], pos[1], CARRY_HEIGHT.min(size[2])];
    for e in scene.entities.iter_mut().filter(|e| e.has(Attribute::Held)) {
        e.position = carry;
    }
}

fn room_center(scene: &Scene) -> Position {
    let s = scene.size();
    [s[0] / 2.0, s[1] / 2.0, 0.0]
}

fn names_room(scene: &Scene, name: &str) -> bool {
    let norm = |s: &str| s.to_ascii_lowercase().replace([' ', '_'], "");
    norm(name) == norm(scene.room_type.as_str()) || norm(name) == "room"
}

fn pick_up(scene: &mut Scene, robot: usize, i: usize, action: &Action) -> Result<(), EpisodeError> {
    let e = &scene.entities[i];
    if e.is_agent || !e.category.is_movable() {
        return Err(infeasible(action, format!("{} cannot be carried", e.id)));
    }
    let target = e.position;
    approach(scene, robot, target);
    scene.entities[i].attributes.insert(Attribute::Held);
    let r = scene.entities[robot].position;
    scene.entities[i].position = [r[0], r[1], CARRY_HEIGHT.min(scene.size()[2])];
    Ok(())
}

fn near_hazard(scene: &Scene, skip: &[usize], p: &Position, clearance: f64) -> bool {
    scene
        .entities
        .iter()
        .enumerate()
        .any(|(k, e)| !skip.contains(&k) && e.is_hazard_source() && distance(&e.position, p) <= clearance)
}

/// Floor spot near the origin corner further than `2 * dt` from every
/// hazard source and not taken by another agent.
fn parking_spot(scene: &Scene, agent: usize, dt: f64) -> Option<Position> {
    let clearance = 2.0 * dt + PARKING_MARGIN;
    let size = scene.size();
    let free = |p: &Position| {
        !near_hazard(scene, &[agent], p, clearance)
            && scene
                .entities
                .iter()
                .enumerate()
                .all(|(k, e)| k == agent || !e.is_agent || distance(&e.position, p) >= 0.15)
    };
    let fixed = PARKING_SPOTS.iter().map(|&[x, y]| [x, y, 0.0]);
    let grid = (0..(size[0] / 0.25) as usize).flat_map(move |gx| {
        (0..(size[1] / 0.25) as usize).map(move |gy| [0.1 + gx as f64 * 0.25, 0.1 + gy as f64 * 0.25, 0.0])
    });
    let here = scene.entities[agent].position;
    let already_safe = !near_hazard(scene, &[agent], &here, clearance);
    if already_safe {
        return Some(here);
    }
    fixed.chain(grid).find(|p| inside(p, size) && free(p))
}

fn inside(p: &Position, size: [f64; 3]) -> bool {
    p.iter().zip(size).all(|(&v, s)| (0.0..=s).contains(&v))
}

fn ensure_safe(scene: &mut Scene, i: usize, dt: f64, action: &Action) -> Result<(), EpisodeError> {
    let spot = parking_spot(scene, i, dt)
        .ok_or_else(|| infeasible(action, format!("no safe spot for {}", scene.entities[i].id)))?;
    scene.entities[i].position = spot;
    Ok(())
}

fn on_shelf(e: &Entity) -> bool {
    (e.position[2] - SHELF_HEIGHT).abs() < 1e-9
}

fn secure(scene: &mut Scene, i: usize, action: &Action) -> Result<(), EpisodeError> {
    if !scene.entities[i].category.is_movable() || scene.entities[i].is_agent {
        // fixtures stay put; the other endpoint has to be moved instead
        return Ok(());
    }
    if on_shelf(&scene.entities[i]) {
        return Ok(());
    }
    let size = scene.size();
    let taken: Vec<Position> = scene
        .entities
        .iter()
        .filter(|e| on_shelf(e))
        .map(|e| e.position)
        .collect();
    let per_row = ((size[0] - 0.3) / SHELF_SLOT).floor() as usize + 1;
    let rows = ((size[1] - 0.1) / SHELF_SLOT).floor() as usize;
    let slot = (0..per_row * rows)
        .map(|k| {
            let (row, col) = (k / per_row, k % per_row);
            [
                0.3 + col as f64 * SHELF_SLOT,
                size[1] - 0.1 - row as f64 * SHELF_SLOT,
                SHELF_HEIGHT,
            ]
        })
        .find(|p| taken.iter().all(|t| distance(t, p) > 1e-9))
        .ok_or_else(|| infeasible(action, "shelf is full"))?;
    let e = &mut scene.entities[i];
    e.attributes.remove(&Attribute::Held);
    e.position = slot;
    Ok(())
}

/// Applies one action, returning the successor scene. `dt` is the distance
/// threshold used for the safety clearance of `EnsureSafe`.
pub fn apply_action(scene: &Scene, action: &Action, dt: f64) -> Result<Scene, EpisodeError> {
    let mut s = scene.clone();
    let robot = robot_index(&s, action)?;
    match action.verb {
        Verb::Done => {}
        Verb::Walk => {
            let name = action.args.first().map(String::as_str).unwrap_or("");
            let target = if names_room(&s, name) {
                room_center(&s)
            } else {
                s.entities[resolve_one(&s, action, 0)?].position
            };
            approach(&mut s, robot, target);
        }
        Verb::PickUp => {
            let name = action.args.first().map(String::as_str).unwrap_or("");
            if name.eq_ignore_ascii_case("ingredients") {
                let food: Vec<usize> = (0..s.entities.len())
                    .filter(|&k| s.entities[k].category.is_food())
                    .collect();
                if food.is_empty() {
                    return Err(infeasible(action, "no ingredients in the scene"));
                }
                for k in food {
                    pick_up(&mut s, robot, k, action)?;
                }
            } else {
                let i = resolve_one(&s, action, 0)?;
                pick_up(&mut s, robot, i, action)?;
            }
        }
        Verb::Place => {
            let (x, y) = (resolve_one(&s, action, 0)?, resolve_one(&s, action, 1)?);
            if !s.entities[x].has(Attribute::Held) {
                return Err(infeasible(action, format!("{} is not held", s.entities[x].id)));
            }
            let dest = s.entities[y].position;
            approach(&mut s, robot, dest);
            let e = &mut s.entities[x];
            e.attributes.remove(&Attribute::Held);
            e.position = [dest[0], dest[1], (dest[2] + 0.05).min(scene.size()[2])];
        }
        Verb::Open | Verb::Close => {
            let i = resolve_one(&s, action, 0)?;
            let target = s.entities[i].position;
            approach(&mut s, robot, target);
            let attrs = &mut s.entities[i].attributes;
            if action.verb == Verb::Open {
                attrs.insert(Attribute::Open);
            } else {
                attrs.remove(&Attribute::Open);
            }
        }
        Verb::StartCook => {
            if action.args.is_empty() {
                let burner = s
                    .entities
                    .iter()
                    .position(|e| e.category == EntityCategory::StoveBurner)
                    .ok_or_else(|| infeasible(action, "no stove burner"))?;
                let target = s.entities[burner].position;
                approach(&mut s, robot, target);
                s.entities[burner]
                    .attributes
                    .extend([Attribute::Active, Attribute::Hot]);
                for e in s
                    .entities
                    .iter_mut()
                    .filter(|e| e.category == EntityCategory::Pan)
                {
                    e.attributes.insert(Attribute::Hot);
                }
            } else {
                let i = resolve_one(&s, action, 0)?;
                let target = s.entities[i].position;
                approach(&mut s, robot, target);
                s.entities[i].attributes.insert(Attribute::Active);
            }
        }
        Verb::EnsureSafe | Verb::SecureObject | Verb::HandleSafetyIssue => {
            let name = action.args.first().map(String::as_str).unwrap_or("");
            let targets = resolve(&s, name);
            if targets.is_empty() {
                return Err(infeasible(action, format!("no entity named `{name}`")));
            }
            for i in targets {
                let agent = s.entities[i].is_agent && !s.entities[i].category.is_robot();
                match (action.verb, agent) {
                    (Verb::EnsureSafe, true) | (Verb::HandleSafetyIssue, true) => {
                        ensure_safe(&mut s, i, dt, action)?
                    }
                    (Verb::EnsureSafe, false) => {
                        return Err(infeasible(
                            action,
                            format!("{} is not a person or animal", s.entities[i].id),
                        ))
                    }
                    (_, false) => secure(&mut s, i, action)?,
                    (Verb::SecureObject, true) => {
                        return Err(infeasible(action, format!("{} is an agent", s.entities[i].id)))
                    }
                    _ => unreachable!("verb filtered by the outer match"),
                }
            }
        }
    }
    Ok(s)
}
