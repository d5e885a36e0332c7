//! Subcommand bodies. Each writes its artifacts plus `config.toml` into the
//! output directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use riskgraph::annotate::{
    all_category_pairs, builtin_risk_table, AnnotationCache, Annotator, BuiltinBackend, LlmAnnotationBackend,
};
use riskgraph::episode::{run_episode, EpisodeTrace, HazardSource};
use riskgraph::eval::{
    bench, bench_scene, compare_baselines, curve_csv, curve_svg, point_at, pr_curve, select_threshold,
    uniform_scores, PRPoint,
};
use riskgraph::graph::{build_graphs, label_stats, write_graphs_jsonl, LabelStats, SafetyGraph};
use riskgraph::llm::HttpLlmClient;
use riskgraph::model::{
    graph_tensors, init_model, load_checkpoint, save_checkpoint, score_graphs, train, Params,
};
use riskgraph::planner::{
    benchmark_tasks, builtin_rules, find_task, load_rules, LlmPlanner, MockPlanner, PlannerBackend, RuleSet,
};
use riskgraph::scene::{
    generate_dataset_with, hazard_scenes, read_scenes_jsonl, write_scenes_jsonl, DatasetSplit, RoomType,
};

use crate::config::{BackendKind, RunConfig, CONFIG_FILE};
use crate::{CliError, Command};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: &Path, config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let out = Output {
            dir: dir.to_path_buf(),
        };
        out.text(CONFIG_FILE, &config.to_toml())?;
        Ok(out)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, body: &str) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, body).map_err(|e| io_err(&p, e))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut body = serde_json::to_string_pretty(value).expect("serializable");
        body.push('\n');
        self.text(name, &body)
    }

    fn with_writer(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let p = self.path(name);
        let file = File::create(&p).map_err(|e| io_err(&p, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&p, e))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        context: path.display().to_string(),
        source,
    }
}

pub fn dispatch(command: &Command, config: &RunConfig, out: &Path) -> Result<(), CliError> {
    info!("{} -> {}", command.name(), out.display());
    let out = Output::create(out, config)?;
    match command {
        Command::GenData { .. } => gen_data(config, &out),
        Command::Annotate => annotate(config, &out),
        Command::BuildGraphs => build_graph_files(config, &out),
        Command::Train { .. } => train_model(config, &out),
        Command::EvalModel { .. } => eval_model(config, &out),
        Command::RunEpisode { .. } => episode(config, &out),
        Command::EvalPlan { .. } => eval_plan(config, &out),
        Command::Bench { .. } => run_bench(config, &out),
    }
}

fn load_dataset(config: &RunConfig) -> Result<DatasetSplit, CliError> {
    let Some(dir) = &config.paths.data else {
        return Ok(generate_dataset_with(
            &config.dataset_config(),
            config.dataset.scenes,
            config.split(),
            config.seed,
        )?);
    };
    let read = |name: &str| -> Result<_, CliError> {
        let p = dir.join(format!("{name}.jsonl"));
        let f = File::open(&p).map_err(|e| io_err(&p, e))?;
        read_scenes_jsonl(BufReader::new(f)).map_err(|e| io_err(&p, e))
    };
    Ok(DatasetSplit {
        train: read("train")?,
        val: read("val")?,
        test: read("test")?,
    })
}

fn load_cache(config: &RunConfig) -> Result<AnnotationCache, CliError> {
    match &config.paths.cache {
        Some(p) => Ok(AnnotationCache::load(p)?),
        None => Ok(builtin_risk_table()),
    }
}

fn split_graphs(
    config: &RunConfig,
    data: &DatasetSplit,
    cache: &AnnotationCache,
) -> Result<[Vec<SafetyGraph>; 3], CliError> {
    Ok([
        build_graphs(&data.train, cache, &config.graph)?,
        build_graphs(&data.val, cache, &config.graph)?,
        build_graphs(&data.test, cache, &config.graph)?,
    ])
}

fn fit(
    config: &RunConfig,
    graphs: &[Vec<SafetyGraph>; 3],
) -> Result<(Params, riskgraph::model::TrainHistory), CliError> {
    let tr = graph_tensors(&graphs[0])?;
    let va = graph_tensors(&graphs[1])?;
    let init = init_model(&config.model)?;
    Ok(train(&init, &tr, &va, &config.train)?)
}

/// The checkpoint from the config, or a model trained on the spot.
fn load_model(config: &RunConfig, graphs: Option<&[Vec<SafetyGraph>; 3]>) -> Result<Params, CliError> {
    if let Some(p) = &config.paths.checkpoint {
        let params = load_checkpoint(p)?;
        if params.config.d_node != config.model.d_node || params.config.d_edge != config.model.d_edge {
            return Err(CliError::Domain(format!(
                "checkpoint {} has other feature widths",
                p.display()
            )));
        }
        return Ok(params);
    }
    info!("no checkpoint given; training one from the config");
    let owned;
    let graphs = match graphs {
        Some(g) => g,
        None => {
            owned = split_graphs(config, &load_dataset(config)?, &load_cache(config)?)?;
            &owned
        }
    };
    Ok(fit(config, graphs)?.0)
}

#[derive(Serialize)]
struct DatasetStats {
    scenes: [usize; 3],
    hazard_injected: [usize; 3],
    train: LabelStats,
    val: LabelStats,
    test: LabelStats,
    overall: LabelStats,
}

fn dataset_stats(data: &DatasetSplit, graphs: &[Vec<SafetyGraph>; 3]) -> DatasetStats {
    let parts = [&data.train, &data.val, &data.test];
    DatasetStats {
        scenes: parts.map(|p| p.len()),
        hazard_injected: parts.map(|p| p.iter().filter(|s| s.hazard_injected).count()),
        train: label_stats(&graphs[0]),
        val: label_stats(&graphs[1]),
        test: label_stats(&graphs[2]),
        overall: label_stats(graphs.iter().flatten()),
    }
}

fn gen_data(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let data = generate_dataset_with(
        &config.dataset_config(),
        config.dataset.scenes,
        config.split(),
        config.seed,
    )?;
    for (name, scenes) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        out.with_writer(&format!("{name}.jsonl"), |w| write_scenes_jsonl(w, scenes))?;
    }
    let graphs = split_graphs(config, &data, &load_cache(config)?)?;
    let stats = dataset_stats(&data, &graphs);
    println!(
        "{} scenes, {} edges, positive rate {:.4}",
        config.dataset.scenes, stats.overall.edges, stats.overall.positive_rate
    );
    out.json("stats.json", &stats)
}

fn annotate(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let existing = match &config.paths.cache {
        Some(p) => AnnotationCache::load(p)?,
        None => AnnotationCache::new(),
    };
    let pairs = all_category_pairs();
    let cache = if config.backend.kind == BackendKind::Http {
        let client = HttpLlmClient::from_env(&config.backend.endpoint, &config.backend.model)?;
        let annotator = Annotator::with_cache(LlmAnnotationBackend::new(Arc::new(client)), existing);
        annotator.annotate_all(&pairs, 4)?;
        annotator.into_cache()
    } else {
        let annotator = Annotator::with_cache(BuiltinBackend, existing);
        annotator.annotate_all(&pairs, 1)?;
        annotator.into_cache()
    };
    println!("{} category pairs annotated", cache.len());
    out.text("risk_cache.json", &cache.to_json_pretty())
}

fn build_graph_files(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let data = load_dataset(config)?;
    let graphs = split_graphs(config, &data, &load_cache(config)?)?;
    for (name, g) in SPLITS.iter().zip(&graphs) {
        out.with_writer(&format!("graphs_{name}.jsonl"), |w| write_graphs_jsonl(w, g))?;
    }
    let stats = dataset_stats(&data, &graphs);
    println!(
        "{} graphs, {} edges, {} positive",
        graphs.iter().map(Vec::len).sum::<usize>(),
        stats.overall.edges,
        stats.overall.positives
    );
    out.json("stats.json", &stats)
}

fn train_model(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let graphs = split_graphs(config, &load_dataset(config)?, &load_cache(config)?)?;
    let (params, history) = fit(config, &graphs)?;
    save_checkpoint(&params, &out.path("model.ckpt"))?;
    let best = &history.epochs[history.best_epoch - 1];
    println!(
        "kept epoch {} of {}: val loss {:.5}",
        history.best_epoch,
        history.epochs.len(),
        best.val_loss
    );
    out.json("history.json", &history)
}

#[derive(Serialize)]
struct Selection {
    recall_target: f64,
    threshold: f64,
    achieved: bool,
    /// Test operating point at the selected threshold.
    test: PRPoint,
}

#[derive(Serialize)]
struct ModelReport {
    test_edges: usize,
    test_positives: usize,
    base_rate: f64,
    /// Threshold picked on the validation curve.
    from_val: Selection,
    /// Threshold picked on the test curve itself.
    from_test: Selection,
    at_threshold: Option<PRPoint>,
    /// Uniform random scores at the test-curve threshold.
    uniform_scorer: PRPoint,
}

fn eval_model(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let graphs = split_graphs(config, &load_dataset(config)?, &load_cache(config)?)?;
    let params = load_model(config, Some(&graphs))?;
    let target = config.eval.recall_target;
    let (val_scores, val_labels) = score_graphs(&params, &graphs[1])?;
    let (scores, labels) = score_graphs(&params, &graphs[2])?;
    let val_choice = select_threshold(&pr_curve(&val_scores, &val_labels)?, target)?;
    let curve = pr_curve(&scores, &labels)?;
    let test_choice = select_threshold(&curve, target)?;
    let at_threshold = config
        .eval
        .threshold
        .map(|t| point_at(&scores, &labels, t))
        .transpose()?;
    let positives = labels.iter().filter(|&&y| y).count();
    let random = uniform_scores(scores.len(), config.seed);
    let report = ModelReport {
        test_edges: scores.len(),
        test_positives: positives,
        base_rate: positives as f64 / scores.len() as f64,
        from_val: Selection {
            recall_target: target,
            threshold: val_choice.threshold,
            achieved: val_choice.achieved,
            test: point_at(&scores, &labels, val_choice.threshold)?,
        },
        from_test: Selection {
            recall_target: target,
            threshold: test_choice.threshold,
            achieved: test_choice.achieved,
            test: test_choice.point,
        },
        at_threshold,
        uniform_scorer: point_at(&random, &labels, test_choice.threshold)?,
    };
    let row = |name: &str, p: &PRPoint| {
        format!(
            "{name:<22} threshold {:>8.4}  precision {:.4}  recall {:.4}  flagged {}\n",
            p.threshold,
            p.precision,
            p.recall,
            p.flagged()
        )
    };
    let mut text = format!(
        "test edges {}, positives {}, base rate {:.4}\n",
        report.test_edges, report.test_positives, report.base_rate
    );
    text += &row("val-selected", &report.from_val.test);
    text += &row("test-selected", &report.from_test.test);
    if let Some(p) = &report.at_threshold {
        text += &row("requested", p);
    }
    text += &row("uniform scorer", &report.uniform_scorer);
    print!("{text}");
    out.text("report.txt", &text)?;
    out.json("report.json", &report)?;
    out.text("pr_curve.csv", &curve_csv(&curve))?;
    let marked = report.at_threshold.unwrap_or(report.from_test.test);
    out.text("pr_curve.svg", &curve_svg(&curve, Some(&marked)))
}

fn planner_for(config: &RunConfig) -> Result<(Box<dyn PlannerBackend>, HazardSource), CliError> {
    Ok(match config.backend.kind {
        BackendKind::Mock => (Box::new(MockPlanner::new()), HazardSource::Graphormer),
        BackendKind::SafePrompt => (
            Box::new(MockPlanner::with_safety_prompt()),
            HazardSource::PromptOnly,
        ),
        BackendKind::Ltl => {
            let (name, rules) = match &config.backend.rules {
                Some(p) => (
                    p.file_stem()
                        .map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
                    load_rules(p)?,
                ),
                None => ("full".to_string(), builtin_rules(RuleSet::Full)),
            };
            (
                Box::new(MockPlanner::with_safety_prompt()),
                HazardSource::Ltl { name, rules },
            )
        }
        BackendKind::Http => {
            let client = HttpLlmClient::from_env(&config.backend.endpoint, &config.backend.model)?;
            (
                Box::new(LlmPlanner::new(Arc::new(client), false)),
                HazardSource::Graphormer,
            )
        }
    })
}

fn episode(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let task = find_task(&config.episode.task).map_err(|e| CliError::Usage(e.to_string()))?;
    let (planner, source) = planner_for(config)?;
    let cache = load_cache(config)?;
    let model = match source {
        HazardSource::Graphormer => Some(load_model(config, None)?),
        _ => None,
    };
    let scene = hazard_scenes(&config.dataset_config(), config.episode.room, 1, config.seed)?.remove(0);
    let trace = run_episode(
        &scene,
        &task,
        planner.as_ref(),
        model.as_ref(),
        &cache,
        &config.episode_config(source),
    )?;
    let mut text = format!(
        "{} in {}: {:?}, success {}, hazard {}, noticed {}, handled {}, {} replans\n",
        trace.task,
        trace.scene_id,
        trace.termination,
        trace.task_success,
        trace.hazard_present,
        trace.safety_noticed,
        trace.safety_handled,
        trace.replans.len()
    );
    for s in &trace.steps {
        text += &format!("{:>3}. {}\n", s.index, s.action.phrase());
        for n in &s.notices {
            text += &format!("     ! {}\n", n.text);
        }
    }
    print!("{text}");
    out.text("summary.txt", &text)?;
    out.with_writer("scene.jsonl", |w| {
        write_scenes_jsonl(w, std::slice::from_ref(&scene))
    })?;
    out.json("trace.json", &trace)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    method: &'a str,
    trace: &'a EpisodeTrace,
}

fn write_traces(out: &Output, name: &str, runs: &[(String, Vec<EpisodeTrace>)]) -> Result<(), CliError> {
    out.with_writer(name, |w| {
        for (method, traces) in runs {
            for trace in traces {
                serde_json::to_writer(&mut *w, &TraceLine { method, trace })?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    })
}

fn eval_plan(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    if config.backend.kind != BackendKind::Mock {
        warn!("eval-plan always compares the five offline methods; the backend setting is ignored");
    }
    let cache = load_cache(config)?;
    let model = load_model(config, None)?;
    let tasks = benchmark_tasks();
    let base = config.episode_config(HazardSource::Graphormer);
    let dc = config.dataset_config();
    for (room, n, stem) in [
        (RoomType::Kitchen, config.eval.kitchen_scenes, "baselines"),
        (RoomType::Bathroom, config.eval.bathroom_scenes, "bathroom"),
    ] {
        if n == 0 {
            continue;
        }
        let scenes = hazard_scenes(&dc, room, n, config.seed)?;
        let (report, runs) = compare_baselines(&scenes, &tasks, &model, &cache, &base)?;
        let text = report.to_text();
        println!("{} hazard scenes x {} tasks ({})", n, tasks.len(), room.as_str());
        print!("{text}");
        out.text(&format!("{stem}.txt"), &text)?;
        out.text(&format!("{stem}.csv"), &report.to_csv())?;
        write_traces(out, &format!("{stem}_traces.jsonl"), &runs)?;
    }
    Ok(())
}

fn run_bench(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let model = load_model(config, None)?;
    let scene = bench_scene(config.bench.entities, config.seed)?;
    let report = bench(
        &scene,
        &model,
        &load_cache(config)?,
        &config.graph,
        config.episode.threshold,
    )?;
    let text = report.to_text();
    print!("{text}");
    out.text("bench.txt", &text)?;
    out.json("bench.json", &report)
}
