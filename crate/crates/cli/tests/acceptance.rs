//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p riskgraph-cli --test acceptance -- --nocapture` to see them.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{oracle_forward, random_graph, random_params, rng, small_config};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use riskgraph::annotate::{builtin_risk_table, RiskLevel};
use riskgraph::episode::EpisodeConfig;
use riskgraph::eval::{
    bench, bench_scene, compare_baselines, point_at, pr_curve, select_threshold, uniform_scores,
};
use riskgraph::graph::{build_graph, build_graphs, label_stats, spatial_proximity, GraphConfig, SpMode};
use riskgraph::model::{
    attention_layer, edge_bias, focal_loss_with, forward, grad, graph_tensors, init_model, score_graphs,
    train, GraphTensors, ModelConfig, Params, TrainConfig,
};
use riskgraph::planner::{
    benchmark_tasks, builtin_rules, ltl_evaluate, parse_plan, render_plan, Action, RuleSet, TaskPlan, Verb,
};
use riskgraph::scene::{
    generate_dataset, generate_scene, hazard_scenes, AgentPolicy, DatasetConfig, RoomType, SceneSpec,
};

const BIN: &str = env!("CARGO_BIN_EXE_riskgraph");

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn check(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    // Straight to the handle so the line survives the test harness's capture.
    let line = format!("criterion {id} {tag}: {name} [{secs:.1} s] {detail}\n");
    let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), line.as_bytes());
    result.is_ok()
}

fn max_fd_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let config = small_config(1, 2, 8, 5, 3, seed);
    let mut p = random_params(&config, &mut r, 0.3);
    let g = random_graph(&mut r, 4, 5, 3, 1.0);
    let tc = TrainConfig::default();
    let (_, analytic) = grad(&p, &g, &tc).unwrap();
    let loss_at = |p: &Params| {
        let probs = forward(p, &g).unwrap().probs;
        focal_loss_with(&probs, &g.labels, tc.gamma, tc.alpha_pos, 1.0 - tc.alpha_pos)
            .unwrap()
            .0
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p.values[k];
        p.values[k] = orig + h;
        let up = loss_at(&p);
        p.values[k] = orig - h;
        let down = loss_at(&p);
        p.values[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let a = analytic.values[k];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-7));
    }
    worst
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let worst = (0..5).map(max_fd_error).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-4 && secs < 60.0,
        format!("max rel error {worst:.2e}, {secs:.1} s"),
    )?;
    Ok(format!("max rel error {worst:.2e} over 5 random models"))
}

fn forward_oracle() -> Outcome {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let config = small_config(1 + (case % 2) as usize, 2, 8, 5, 3, case);
        let p = random_params(&config, &mut r, 0.2);
        let n = r.random_range(1..=6);
        let density = r.random_range(0.3..=1.0);
        let g = random_graph(&mut r, n, 5, 3, density);
        let (_, expected) = oracle_forward(&p, &g);
        let got = forward(&p, &g).unwrap().probs;
        ensure(got.len() == expected.len(), "edge count mismatch")?;
        for (a, b) in got.iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, format!("max abs diff {worst:.2e}"))?;
    Ok(format!("100 graphs, max abs diff {worst:.2e}"))
}

fn loss_reductions() -> Outcome {
    let mut r = rng(3);
    let p: Vec<f64> = (0..1000).map(|_| r.random_range(1e-6..1.0 - 1e-6)).collect();
    let y: Vec<bool> = (0..1000).map(|_| r.random()).collect();
    let (focal, _) = focal_loss_with(&p, &y, 0.0, 1.0, 1.0).unwrap();
    let bce: f64 = p
        .iter()
        .zip(&y)
        .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    let diff = (focal - bce).abs();
    let (worked, _) = focal_loss_with(&[0.9], &[true], 2.0, 1.0, 1.0).unwrap();
    ensure(diff <= 1e-9, format!("focal vs BCE differ by {diff:.2e}"))?;
    ensure(
        (worked - 0.0010536).abs() <= 1e-7,
        format!("worked value {worked:.9}"),
    )?;
    Ok(format!(
        "|focal - BCE| = {diff:.1e}; gamma 2, p 0.9 -> {worked:.7}"
    ))
}

fn classifier(model: &mut Option<Params>) -> Outcome {
    let t = Instant::now();
    let data = generate_dataset(120, (90, 15, 15), 1).unwrap();
    let cache = builtin_risk_table();
    let gc = GraphConfig::default();
    let graphs: Vec<_> = [&data.train, &data.val, &data.test]
        .iter()
        .map(|s| build_graphs(s, &cache, &gc).unwrap())
        .collect();
    let rate = label_stats(graphs.iter().flatten()).positive_rate;
    ensure(
        (0.005..=0.02).contains(&rate),
        format!("positive edge rate {rate:.4} is not about 1%"),
    )?;
    let init = init_model(&ModelConfig::default()).unwrap();
    let tr = graph_tensors(&graphs[0]).unwrap();
    let va = graph_tensors(&graphs[1]).unwrap();
    let (params, _) = train(&init, &tr, &va, &TrainConfig::default()).unwrap();
    let (scores, labels) = score_graphs(&params, &graphs[2]).unwrap();
    let test_base = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
    let choice = select_threshold(&pr_curve(&scores, &labels).unwrap(), 0.85).unwrap();
    let p = choice.point;
    let reference = point_at(&scores, &labels, 0.21).unwrap();

    // No-skill reference over every labeled edge in the dataset.
    let all_labels: Vec<bool> = graphs.iter().flatten().flat_map(|g| g.labels()).collect();
    let all_base = all_labels.iter().filter(|&&y| y).count() as f64 / all_labels.len() as f64;
    let random = point_at(
        &uniform_scores(all_labels.len(), 1),
        &all_labels,
        choice.threshold,
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    *model = Some(params);

    let detail = format!(
        "base rate {:.4}; threshold {:.3}: recall {:.3}, precision {:.3} ({:.1}x base); at 0.21: recall {:.3}, precision {:.3}; \
         uniform scorer over {} edges: precision {:.4} vs base {:.4}",
        test_base,
        choice.threshold,
        p.recall,
        p.precision,
        p.precision / test_base,
        reference.recall,
        reference.precision,
        all_labels.len(),
        random.precision,
        all_base
    );
    ensure(
        choice.achieved && p.recall >= 0.85,
        format!("recall target missed: {detail}"),
    )?;
    ensure(
        p.precision >= 10.0 * test_base,
        format!("precision too low: {detail}"),
    )?;
    ensure(
        all_labels.len() >= 10_000,
        "fewer than 10,000 edges for the random scorer",
    )?;
    ensure(
        (random.precision - all_base).abs() <= 0.5 * all_base,
        format!("random scorer off: {detail}"),
    )?;
    ensure(secs <= 600.0, format!("took {secs:.0} s"))?;
    Ok(detail)
}

fn planning_table(model: &Params) -> Outcome {
    let cache = builtin_risk_table();
    let dc = DatasetConfig::default();
    let tasks = benchmark_tasks();
    let config = EpisodeConfig::default();
    let kitchen = hazard_scenes(&dc, RoomType::Kitchen, 20, 1).unwrap();
    let (report, _) = compare_baselines(&kitchen, &tasks, model, &cache, &config).unwrap();
    let o = |name: &str| report.row(name).unwrap().metrics.overall;
    let bathroom = hazard_scenes(&dc, RoomType::Bathroom, 20, 1).unwrap();
    let (outside, _) = compare_baselines(&bathroom, &tasks, model, &cache, &config).unwrap();
    let b = |name: &str| outside.row(name).unwrap().metrics.overall;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.0}"));
    let detail = format!(
        "kitchen SNR/RHS: graphormer {}/{}, llm_only {}/{}, safe_prompting {}/{}, ltl_full {}/{}, ltl_partial {}/{}; \
         bathroom SNR: ltl_partial {}, graphormer {}, ltl_full {}",
        pct(o("graphormer").snr),
        pct(o("graphormer").rhs),
        pct(o("llm_only").snr),
        pct(o("llm_only").rhs),
        pct(o("safe_prompting").snr),
        pct(o("safe_prompting").rhs),
        pct(o("ltl_full").snr),
        pct(o("ltl_full").rhs),
        pct(o("ltl_partial").snr),
        pct(o("ltl_partial").rhs),
        pct(b("ltl_partial").snr),
        pct(b("graphormer").snr),
        pct(b("ltl_full").snr),
    );
    ensure(
        o("graphormer").hazard_episodes == 100,
        format!("{} hazard episodes", o("graphormer").hazard_episodes),
    )?;
    ensure(o("graphormer").snr == Some(100.0), detail.clone())?;
    ensure(o("graphormer").rhs.is_some_and(|v| v >= 95.0), detail.clone())?;
    ensure(o("llm_only").snr == Some(0.0), detail.clone())?;
    ensure(o("ltl_full").snr == Some(100.0), detail.clone())?;
    ensure(b("ltl_partial").snr.is_some_and(|v| v < 100.0), detail.clone())?;
    ensure(b("graphormer").snr > b("ltl_partial").snr, detail.clone())?;
    Ok(detail)
}

fn timing(model: &Params) -> Outcome {
    let scene = bench_scene(50, 1).unwrap();
    let report = bench(
        &scene,
        model,
        &builtin_risk_table(),
        &GraphConfig::default(),
        0.21,
    )
    .unwrap();
    let names: Vec<&str> = report.stages.iter().map(|s| s.stage.as_str()).collect();
    ensure(
        names
            == [
                "Retrieve Object Information",
                "Build Environment Graph",
                "Receive Safety Notice",
                "Generate Task Sequence",
                "Parse Task Sequence",
            ],
        format!("stages {names:?}"),
    )?;
    let get = |n: &str| report.stage(n).unwrap();
    let build = get("Build Environment Graph").median_seconds;
    let parse = get("Parse Task Sequence").median_seconds;
    let labeled = get("Generate Task Sequence")
        .note
        .as_deref()
        .is_some_and(|n| n.contains("excluded from LLM latency comparison"));
    let detail = format!(
        "{} entities: build graph {:.3} ms, parse {:.4} ms, generation labeled mock: {labeled}",
        report.entities,
        build * 1e3,
        parse * 1e3
    );
    ensure(
        report.entities == 50 && build < 0.020 && parse < 0.001 && labeled,
        detail.clone(),
    )?;
    Ok(detail)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN)
        .args(args)
        .env_remove("RISKGRAPH_LLM_API_KEY")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        o.status.success(),
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)),
    )
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

/// Bench output minus the measured seconds.
fn without_timings(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    for s in v["stages"].as_array_mut().unwrap() {
        s["median_seconds"] = serde_json::Value::Null;
    }
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |n: &str| root.join(n).to_str().unwrap().to_string();
    let data = p("gen-data-1");
    let ckpt = p("train-1/model.ckpt");
    let cache = p("annotate-1/risk_cache.json");
    let (ckpt, cache) = (ckpt.as_str(), cache.as_str());
    let runs: Vec<(&str, Vec<&str>)> = vec![
        (
            "gen-data",
            vec!["--scenes", "120", "--split", "90,15,15", "--seed", "1"],
        ),
        ("annotate", vec![]),
        ("build-graphs", vec!["--data", &data, "--cache", cache]),
        ("train", vec!["--data", &data, "--seed", "1"]),
        (
            "eval-model",
            vec!["--data", &data, "--checkpoint", ckpt, "--threshold", "0.21"],
        ),
        ("run-episode", vec!["--checkpoint", ckpt]),
        ("eval-plan", vec!["--checkpoint", ckpt]),
        ("bench", vec!["--checkpoint", ckpt]),
    ];
    let mut compared = 0;
    for (cmd, args) in &runs {
        let (first, second) = (p(&format!("{cmd}-1")), p(&format!("{cmd}-2")));
        let mut a = vec![*cmd];
        a.extend(args.iter().copied());
        a.extend(["--out", &first]);
        run_cli(&a)?;
        let cfg = format!("{first}/config.toml");
        run_cli(&[cmd, "--config", &cfg, "--out", &second])?;
        let (x, y) = (dir_bytes(Path::new(&first)), dir_bytes(Path::new(&second)));
        ensure(x.keys().eq(y.keys()), format!("{cmd}: different file sets"))?;
        for (name, bytes) in &x {
            let same = match name.as_str() {
                "bench.txt" => true,
                "bench.json" => without_timings(bytes) == without_timings(&y[name]),
                _ => bytes == &y[name],
            };
            ensure(same, format!("{cmd}: {name} differs"))?;
            compared += 1;
        }
    }
    Ok(format!(
        "8 subcommands, {compared} artifacts identical on re-run from config.toml (bench timings excluded)"
    ))
}

fn invariants() -> Outcome {
    let mut r = rng(8);
    let mut done = Vec::new();

    for _ in 0..200 {
        let seed = r.random();
        let config = small_config(1, 2, 8, 5, 3, seed);
        let p = random_params(&config, &mut r, 1.0);
        let n = r.random_range(1..=7);
        let density = r.random_range(0.0..1.0);
        let g = random_graph(&mut r, n, 5, 3, density);
        let h = g.x.dot(&p.mat(p.layout.input_w)) + &p.mat(p.layout.input_b);
        let (_, alpha) = attention_layer(&p, 0, &h, &edge_bias(&p, 0, &g));
        for a in &alpha {
            for i in 0..n {
                ensure((a.row(i).sum() - 1.0).abs() <= 1e-9, "softmax row sum")?;
            }
        }
    }
    done.push("softmax rows");

    for _ in 0..100 {
        let seed = r.random();
        let config = small_config(2, 2, 8, 5, 3, seed);
        let p = random_params(&config, &mut r, 0.3);
        let n = r.random_range(2..=6);
        let g = random_graph(&mut r, n, 5, 3, 0.7);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut x = Array2::zeros(g.x.dim());
        for i in 0..n {
            x.row_mut(perm[i]).assign(&g.x.row(i));
        }
        let edges = g
            .edges
            .iter()
            .map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        let pg = GraphTensors::new(x, edges, g.edge_features.clone(), g.labels.clone()).unwrap();
        let (a, b) = (forward(&p, &g).unwrap(), forward(&p, &pg).unwrap());
        for (u, v) in a.probs.iter().zip(&b.probs) {
            ensure((u - v).abs() <= 1e-9, "permutation changed a probability")?;
        }
    }
    done.push("permutation equivariance");

    for _ in 0..1000 {
        let dt = r.random_range(0.05..2.0);
        for mode in [SpMode::Clamped, SpMode::PaperLiteral] {
            let c = GraphConfig {
                dt,
                sp_mode: mode,
                ..Default::default()
            };
            let (a, b): (f64, f64) = (r.random_range(1e-4..10.0), r.random_range(1e-4..10.0));
            ensure(
                spatial_proximity(a.min(b), &c) >= spatial_proximity(a.max(b), &c),
                "SP increased",
            )?;
            let at = spatial_proximity(dt, &c);
            for d in [dt - 1e-9, dt + 1e-9] {
                ensure(
                    (spatial_proximity(d, &c) - at).abs() <= 1e-6 * at,
                    "SP jumps at DT",
                )?;
            }
        }
    }
    done.push("SP monotone and continuous");

    let cache = builtin_risk_table();
    let low = cache.with_all_levels(RiskLevel::Low);
    let mut changed = 0;
    for seed in 0..100 {
        let spec = SceneSpec::new(RoomType::ALL[seed % 4]).with_policy(AgentPolicy::NearHazard);
        let scene = generate_scene(&spec, seed as u64).unwrap();
        let (a, b) = (
            build_graph(&scene, &cache, &GraphConfig::default()).unwrap(),
            build_graph(&scene, &low, &GraphConfig::default()).unwrap(),
        );
        ensure(
            a.node_features == b.node_features && a.adjacency == b.adjacency,
            "node side changed",
        )?;
        ensure(
            a.edges
                .iter()
                .zip(&b.edges)
                .all(|(x, y)| x.features == y.features),
            "edge features changed",
        )?;
        changed += usize::from(a.labels() != b.labels());
    }
    ensure(changed > 0, "labels never depended on the cache")?;
    done.push("feature/label separation");

    for _ in 0..200 {
        let n = r.random_range(1..300);
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(0..25) as f64) / 25.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.2)).collect();
        labels[0] = true;
        let positives = labels.iter().filter(|&&y| y).count();
        for pt in pr_curve(&scores, &labels).unwrap() {
            let flagged = scores.iter().filter(|&&s| s >= pt.threshold).count();
            ensure(
                pt.tp + pt.fn_ == positives && pt.tp + pt.fp == flagged,
                "PR counts",
            )?;
        }
    }
    done.push("PR count identities");

    let rules = builtin_rules(RuleSet::Full);
    for _ in 0..200 {
        let spec = SceneSpec::new(RoomType::ALL[r.random_range(0..4)]).with_policy(AgentPolicy::NearHazard);
        let scene = generate_scene(&spec, r.random()).unwrap();
        let small: Vec<_> = rules.iter().filter(|_| r.random_bool(0.5)).cloned().collect();
        let mut big = small.clone();
        big.extend(
            rules
                .iter()
                .filter(|x| !small.contains(x) && r.random_bool(0.5))
                .cloned(),
        );
        let (s, b) = (ltl_evaluate(&small, &scene), ltl_evaluate(&big, &scene));
        ensure(s.safe || !b.safe, "adding rules made a scene safe")?;
    }
    done.push("LTL monotonicity");

    let words = [
        "knife",
        "stove_burner",
        "baby_0",
        "kitchen",
        "pan_2",
        "plate",
        "fridge",
        "x9",
    ];
    for _ in 0..500 {
        let len = r.random_range(0..10);
        let picks: Vec<String> = (0..2 * len)
            .map(|_| words[r.random_range(0..words.len())].to_string())
            .collect();
        let mut it = picks.into_iter();
        let mut w = || it.next().unwrap();
        let mut steps: Vec<Action> = (0..len)
            .map(|k| match k % 8 {
                0 => Action::new(Verb::Walk, vec![w()]),
                1 => Action::new(Verb::PickUp, vec![w()]),
                2 => Action::new(Verb::Place, vec![w(), w()]),
                3 => Action::new(Verb::Open, vec![w()]),
                4 => Action::new(Verb::Close, vec![w()]),
                5 => Action::new(Verb::StartCook, vec![w()]),
                6 => Action::new(Verb::EnsureSafe, vec![w()]),
                _ => Action::new(Verb::SecureObject, vec![w()]),
            })
            .collect();
        steps.shuffle(&mut r);
        steps.push(Action::new(Verb::Done, vec![]));
        let plan = TaskPlan::from_steps("", steps, 0);
        ensure(
            parse_plan(&render_plan(&plan)).unwrap() == plan,
            "plan round trip",
        )?;
    }
    done.push("plan round trip");

    Ok(done.join(", "))
}

#[test]
fn acceptance() {
    let mut passed = Vec::new();
    passed.push(check(1, "gradient check", gradients));
    passed.push(check(2, "forward oracle", forward_oracle));
    passed.push(check(3, "loss reductions", loss_reductions));
    let mut model = None;
    passed.push(check(4, "classifier precision/recall", || classifier(&mut model)));
    // Criteria 5 and 6 still run (and report) if training failed.
    let params = model.unwrap_or_else(|| init_model(&ModelConfig::default()).unwrap());
    passed.push(check(5, "planning baselines", || planning_table(&params)));
    passed.push(check(6, "stage timings", || timing(&params)));
    passed.push(check(7, "CLI determinism", determinism));
    passed.push(check(8, "invariant suites", invariants));
    let failed: Vec<usize> = passed
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(k, _)| k + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
