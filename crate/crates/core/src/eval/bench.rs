use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationCache;
use crate::episode::{detect_hazards, EpisodeError, StageTimings};
use crate::graph::{build_graph, GraphConfig};
use crate::model::Params;
use crate::planner::{
    find_task, parse_plan, render_plan, Action, MockPlanner, PlannerBackend, TaskPlan, Verb,
};
use crate::scene::{generate_scene, AgentPolicy, RoomType, Scene, SceneError, SceneSpec};

/// Timed runs per stage, after one discarded warm-up run.
pub const BENCH_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: String,
    pub median_seconds: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub entities: usize,
    pub edges: usize,
    pub runs: usize,
    pub stages: Vec<StageResult>,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} entities, {} edges, median of {} runs\n",
            self.entities, self.edges, self.runs
        );
        let w = self.stages.iter().map(|s| s.stage.len()).max().unwrap_or(0);
        for s in &self.stages {
            let _ = write!(out, "{:<w$}  {:>10.6} s", s.stage, s.median_seconds);
            if let Some(n) = &s.note {
                let _ = write!(out, "  ({n})");
            }
            out.push('\n');
        }
        out
    }

    pub fn as_timings(&self) -> StageTimings {
        let get = |k: usize| {
            self.stage(StageTimings::NAMES[k])
                .map_or(0.0, |s| s.median_seconds)
        };
        StageTimings {
            retrieve_object_information: get(0),
            build_environment_graph: get(1),
            receive_safety_notice: get(2),
            generate_task_sequence: get(3),
            parse_task_sequence: get(4),
        }
    }
}

/// A kitchen with exactly `n` entities (robot included, no other agents).
pub fn bench_scene(n: usize, seed: u64) -> Result<Scene, SceneError> {
    let mut spec = SceneSpec::new(RoomType::Kitchen).with_policy(AgentPolicy::None);
    spec.object_count = (n - 1, n - 1);
    // Scene validation reserves room for four agents; only the robot is placed.
    spec.max_entities = spec.max_entities.max(n + 3);
    let scene = generate_scene(&spec, seed)?;
    debug_assert_eq!(scene.entities.len(), n);
    Ok(scene)
}

fn median_time<T>(runs: usize, mut f: impl FnMut() -> T) -> f64 {
    std::hint::black_box(f());
    let mut samples: Vec<f64> = (0..runs)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let m = samples.len();
    if m % 2 == 1 {
        samples[m / 2]
    } else {
        0.5 * (samples[m / 2 - 1] + samples[m / 2])
    }
}

/// Times the five pipeline stages on one scene. The plan being parsed is the
/// cooking task's plan after a replan with two mitigation steps.
pub fn bench(
    scene: &Scene,
    model: &Params,
    cache: &AnnotationCache,
    graph_config: &GraphConfig,
    threshold: f64,
) -> Result<BenchReport, EpisodeError> {
    let graph = build_graph(scene, cache, graph_config)?;
    let task = find_task("prepare a meal").expect("bundled task");
    let planner = MockPlanner::new();
    let mut steps = vec![
        Action::new(Verb::EnsureSafe, vec!["baby_0".into()]),
        Action::new(Verb::SecureObject, vec!["knife_0".into()]),
    ];
    steps.extend(task.template_plan().expect("template parses").steps);
    let plan_text = render_plan(&TaskPlan::from_steps(&task.name, steps, 1));
    let summary = scene.summary();

    let t = [
        median_time(BENCH_RUNS, || scene.summary()),
        median_time(BENCH_RUNS, || build_graph(scene, cache, graph_config)),
        median_time(BENCH_RUNS, || detect_hazards(&graph, model, threshold, cache)),
        median_time(BENCH_RUNS, || planner.initial_plan(&task, &summary)),
        median_time(BENCH_RUNS, || parse_plan(&plan_text)),
    ];
    detect_hazards(&graph, model, threshold, cache)?;
    let stages = StageTimings::NAMES
        .iter()
        .zip(t)
        .enumerate()
        .map(|(k, (name, secs))| StageResult {
            stage: name.to_string(),
            median_seconds: secs,
            note: match k {
                2 => Some("graph model forward pass and notice rendering".into()),
                3 => Some("mock backend, no network; excluded from LLM latency comparison".into()),
                _ => None,
            },
        })
        .collect();
    Ok(BenchReport {
        entities: scene.entities.len(),
        edges: graph.edges.len(),
        runs: BENCH_RUNS,
        stages,
    })
}
