mod common;

use proptest::prelude::*;
use riskgraph::annotate::builtin_risk_table;
use riskgraph::episode::{
    apply_action, detect_hazards, run_episode, stage_timings, EpisodeConfig, EpisodeTrace, HazardSource,
};
use riskgraph::eval::planning_metrics;
use riskgraph::graph::{build_graph, GraphConfig};
use riskgraph::model::{init_model, train, GraphTensors, ModelConfig, TrainConfig};
use riskgraph::planner::{
    benchmark_tasks, builtin_rules, find_task, mitigations_for, MockPlanner, RuleSet, Verb,
};
use riskgraph::scene::{
    distance, generate_scene, hazard_scenes, AgentPolicy, DatasetConfig, Entity, EntityCategory, RoomType,
    Scene, SceneSpec,
};

fn baby_by_knife() -> Scene {
    Scene {
        id: "baby-knife".into(),
        room_type: RoomType::Kitchen,
        entities: vec![
            Entity::new("robot_0", EntityCategory::Robot, [4.5, 3.5, 0.0]),
            Entity::new("stove_burner_0", EntityCategory::StoveBurner, [4.0, 0.5, 0.0]),
            Entity::new("knife_0", EntityCategory::Knife, [2.5, 2.0, 0.0]),
            Entity::new("baby_0", EntityCategory::Baby, [2.8, 2.2, 0.0]),
            Entity::new("tomato_0", EntityCategory::Tomato, [3.5, 3.0, 0.0]),
            Entity::new("plate_0", EntityCategory::Plate, [2.0, 3.5, 0.0]),
        ],
        hazard_injected: true,
        rng_seed: 0,
    }
}

#[test]
fn baby_near_knife_triggers_one_replan_and_is_handled() {
    let t = common::trained();
    let task = find_task("prepare a meal").unwrap();
    let trace = run_episode(
        &baby_by_knife(),
        &task,
        &MockPlanner::new(),
        Some(&t.params),
        &t.cache,
        &EpisodeConfig::default(),
    )
    .unwrap();
    let notices: usize = trace.steps.iter().map(|s| s.notices.len()).sum();
    assert!(notices >= 1);
    assert_eq!(trace.replans.len(), 1);
    let pos = |v: Verb| trace.steps.iter().position(|s| s.action.verb == v);
    let cook = pos(Verb::StartCook).unwrap();
    assert!(pos(Verb::EnsureSafe).unwrap() < cook);
    assert!(trace.safety_noticed && trace.safety_handled && trace.task_success);
    let first = &trace.steps[0].notices[0];
    assert!(first
        .text
        .starts_with("High-risk edge detected: Baby → Knife (Risk level: High)"));
}

#[test]
fn no_detector_means_nothing_noticed() {
    let t = common::trained();
    let task = find_task("prepare a meal").unwrap();
    let config = EpisodeConfig {
        hazard_source: HazardSource::None,
        ..Default::default()
    };
    let trace = run_episode(
        &baby_by_knife(),
        &task,
        &MockPlanner::new(),
        None,
        &t.cache,
        &config,
    )
    .unwrap();
    assert!(trace.hazard_present);
    assert!(!trace.safety_noticed && !trace.safety_handled);
    assert!(trace.steps.iter().all(|s| s.notices.is_empty()));
}

#[test]
fn scene_without_hazard_sources_completes_without_notices() {
    let t = common::trained();
    let scene = Scene {
        id: "calm".into(),
        room_type: RoomType::Kitchen,
        entities: vec![
            Entity::new("robot_0", EntityCategory::Robot, [4.5, 3.5, 0.0]),
            Entity::new("fridge_0", EntityCategory::Fridge, [4.7, 0.3, 0.0]),
            Entity::new("apple_0", EntityCategory::Apple, [2.0, 2.0, 0.0]),
            Entity::new("plate_0", EntityCategory::Plate, [2.4, 2.1, 0.0]),
            Entity::new("mug_0", EntityCategory::Mug, [1.0, 3.0, 0.0]),
            Entity::new("bread_0", EntityCategory::Bread, [3.0, 1.0, 0.0]),
            Entity::new("cutting_board_0", EntityCategory::CuttingBoard, [3.2, 1.1, 0.0]),
            Entity::new("adult_0", EntityCategory::Adult, [2.2, 2.3, 0.0]),
        ],
        hazard_injected: false,
        rng_seed: 0,
    };
    let task = find_task("put the apple on the plate").unwrap();
    let rules = EpisodeConfig {
        hazard_source: HazardSource::Ltl {
            name: "full".into(),
            rules: builtin_rules(RuleSet::Full),
        },
        ..Default::default()
    };
    let trace = run_episode(&scene, &task, &MockPlanner::new(), None, &t.cache, &rules).unwrap();
    assert!(trace.task_success && !trace.hazard_present);
    assert!(trace.steps.iter().all(|s| s.notices.is_empty()));
    assert!(trace.replans.is_empty());

    // The trained detector may still false-alarm here; the task must survive it.
    let learned = run_episode(
        &scene,
        &task,
        &MockPlanner::new(),
        Some(&t.params),
        &t.cache,
        &EpisodeConfig::default(),
    )
    .unwrap();
    assert!(learned.task_success && !learned.hazard_present && !learned.safety_handled);
}

/// Generated scenes with no labeled edge still complete; the detector may
/// raise false alarms there, which only add mitigation steps.
#[test]
fn unlabeled_generated_scenes_complete() {
    let t = common::trained();
    let mut checked = 0;
    for seed in 0..40 {
        let spec = SceneSpec::new(RoomType::Kitchen).with_policy(AgentPolicy::None);
        let scene = generate_scene(&spec, seed).unwrap();
        if build_graph(&scene, &t.cache, &t.graph_config)
            .unwrap()
            .positives()
            > 0
        {
            continue;
        }
        let task = find_task("put the apple on the plate").unwrap();
        let trace = run_episode(
            &scene,
            &task,
            &MockPlanner::new(),
            Some(&t.params),
            &t.cache,
            &EpisodeConfig::default(),
        )
        .unwrap();
        assert!(trace.task_success, "{}", scene.id);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} unlabeled scenes");
}

#[test]
fn threshold_one_flags_nothing() {
    let cache = builtin_risk_table();
    let params = init_model(&ModelConfig::default()).unwrap();
    let g = build_graph(&baby_by_knife(), &cache, &GraphConfig::default()).unwrap();
    assert!(detect_hazards(&g, &params, 1.0, &cache).unwrap().is_empty());
}

#[test]
fn overfit_model_flags_exactly_the_labeled_edges() {
    let cache = builtin_risk_table();
    let scene = baby_by_knife();
    let g = build_graph(&scene, &cache, &GraphConfig::default()).unwrap();
    let tensors = GraphTensors::from_graph(&g).unwrap();
    let init = init_model(&ModelConfig::default()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 300,
        ..Default::default()
    };
    let (params, _) = train(&init, &[tensors], &[], &cfg).unwrap();
    let mut flagged: Vec<(String, String)> = detect_hazards(&g, &params, 0.5, &cache)
        .unwrap()
        .iter()
        .map(|n| n.edge_key())
        .collect();
    flagged.sort();
    let mut labeled: Vec<(String, String)> = g
        .edges
        .iter()
        .filter(|e| e.label)
        .map(|e| {
            let (a, b) = (g.node_ids[e.i].clone(), g.node_ids[e.j].clone());
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    labeled.sort();
    assert!(!labeled.is_empty());
    assert_eq!(flagged, labeled);
}

fn kitchen_batch() -> Vec<EpisodeTrace> {
    let t = common::trained();
    let scenes = hazard_scenes(&DatasetConfig::default(), RoomType::Kitchen, 6, 11).unwrap();
    let mut out = Vec::new();
    for scene in &scenes {
        for task in benchmark_tasks() {
            out.push(
                run_episode(
                    scene,
                    &task,
                    &MockPlanner::new(),
                    Some(&t.params),
                    &t.cache,
                    &EpisodeConfig::default(),
                )
                .unwrap(),
            );
        }
    }
    out
}

#[test]
fn episodes_are_deterministic_and_flags_are_consistent() {
    let a = kitchen_batch();
    let b = kitchen_batch();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let scenes = hazard_scenes(&DatasetConfig::default(), RoomType::Kitchen, 6, 11).unwrap();
    for (k, trace) in a.iter().enumerate() {
        assert!(trace.replans.len() <= EpisodeConfig::default().max_replans);
        assert!(!trace.safety_handled || trace.safety_noticed);
        let o = trace.recompute_outcomes(&scenes[k / 5]);
        assert_eq!(
            (o.hazard_present, o.safety_noticed, o.safety_handled),
            (trace.hazard_present, trace.safety_noticed, trace.safety_handled)
        );
        assert!(trace.steps.iter().all(|s| s.timings.is_none()));
    }
}

#[test]
fn metrics_survive_trace_serialization() {
    let traces = kitchen_batch();
    let text = serde_json::to_string(&traces).unwrap();
    let back: Vec<EpisodeTrace> = serde_json::from_str(&text).unwrap();
    assert_eq!(
        planning_metrics(&traces).unwrap(),
        planning_metrics(&back).unwrap()
    );
}

#[test]
fn timings_are_recorded_on_request() {
    let t = common::trained();
    let config = EpisodeConfig {
        record_timings: true,
        ..Default::default()
    };
    let task = find_task("toast bread").unwrap();
    let trace = run_episode(
        &baby_by_knife(),
        &task,
        &MockPlanner::new(),
        Some(&t.params),
        &t.cache,
        &config,
    )
    .unwrap();
    let total = stage_timings(&trace);
    assert!(total.values().iter().all(|&v| v >= 0.0));
    assert!(total.build_environment_graph > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Executing the mock mitigations for every labeled edge drops each
    /// edge's danger score below the label threshold.
    #[test]
    fn mitigations_clear_labeled_edges(seed in 0u64..5_000, room in 0usize..4) {
        let cache = builtin_risk_table();
        let config = GraphConfig::default();
        let spec = SceneSpec::new(RoomType::ALL[room]).with_policy(AgentPolicy::NearHazard);
        let mut scene = generate_scene(&spec, seed).unwrap();
        let g = build_graph(&scene, &cache, &config).unwrap();
        let flagged: Vec<_> = g.edges.iter().filter(|e| e.label).map(|e| {
            riskgraph::episode::SafetyNotice::new(
                (&g.node_ids[e.i], g.node_categories[e.i]),
                (&g.node_ids[e.j], g.node_categories[e.j]),
                1.0,
                cache.get(g.node_categories[e.i], g.node_categories[e.j]).unwrap().clone(),
            )
        }).collect();
        for n in &flagged {
            for m in mitigations_for(n) {
                scene = apply_action(&scene, &m, config.dt).unwrap();
            }
        }
        let after = build_graph(&scene, &cache, &config).unwrap();
        for n in &flagged {
            let e = after.edge_between(&n.edge.a, &n.edge.b).unwrap();
            prop_assert!(e.danger_score < config.label_threshold, "{} {} still {}", n.edge.a, n.edge.b, e.danger_score);
        }
        for agent in scene.entities.iter().filter(|e| e.is_agent && !e.category.is_robot()) {
            let moved = flagged.iter().any(|n| n.edge.a == agent.id || n.edge.b == agent.id);
            if moved {
                for h in scene.entities.iter().filter(|e| e.is_hazard_source()) {
                    prop_assert!(distance(&agent.position, &h.position) >= 2.0 * config.dt);
                }
            }
        }
    }
}
