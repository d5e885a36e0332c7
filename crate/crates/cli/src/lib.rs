//! Command-line front end. `run` parses arguments, resolves the
//! [`RunConfig`], dispatches to a subcommand and maps failures to exit codes:
//! 0 on success, 1 for domain errors, 2 for usage errors.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use riskgraph::graph::SpMode;
use riskgraph::scene::RoomType;

pub use config::{BackendKind, RunConfig, CONFIG_FILE, TOOL_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_from!(
    riskgraph::scene::SceneError,
    riskgraph::annotate::AnnotateError,
    riskgraph::graph::GraphError,
    riskgraph::model::ModelError,
    riskgraph::eval::EvalError,
    riskgraph::episode::EpisodeError,
    riskgraph::planner::PlanError,
    riskgraph::llm::LlmError
);

#[derive(Debug, Parser)]
#[command(name = "riskgraph", version, about = "Risk-aware task planning pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Distance threshold in meters for spatial proximity.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Spatial proximity curve: `clamped` or `paper-literal`.
    #[arg(long, global = true, value_parser = parse_sp_mode)]
    pub sp_mode: Option<SpMode>,
    /// Detection threshold for episodes; also reported by eval-model.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Focal loss focusing exponent.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Focal loss weight on positive edges.
    #[arg(long, global = true)]
    pub alpha_pos: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// JSON rule file for the ltl backend.
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Dataset directory written by gen-data.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Risk cache written by annotate.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Model checkpoint written by train.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_sp_mode(s: &str) -> Result<SpMode, String> {
    s.parse()
}

fn parse_room(s: &str) -> Result<RoomType, String> {
    s.parse()
        .map_err(|e: riskgraph::scene::UnknownCategory| e.to_string())
}

fn parse_split(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected train,val,test counts, got `{s}`"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("`{p}` is not a count"))?;
    }
    Ok(out)
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenes and write the train/val/test split.
    GenData {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long, value_parser = parse_split)]
        split: Option<[usize; 3]>,
    },
    /// Build or extend the category-pair risk cache.
    Annotate,
    /// Turn scenes into labeled safety graphs.
    BuildGraphs,
    /// Train the edge classifier and write a checkpoint.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Precision/recall on the test split and threshold selection.
    EvalModel {
        #[arg(long)]
        recall_target: Option<f64>,
    },
    /// Run one task in one generated hazard scene.
    RunEpisode {
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_parser = parse_room)]
        room: Option<RoomType>,
    },
    /// Compare the five planning methods on hazard scenes.
    EvalPlan {
        /// Kitchen hazard scenes; the bathroom check uses the same count.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Time the five pipeline stages.
    Bench {
        #[arg(long)]
        entities: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Annotate => "annotate",
            Command::BuildGraphs => "build-graphs",
            Command::Train { .. } => "train",
            Command::EvalModel { .. } => "eval-model",
            Command::RunEpisode { .. } => "run-episode",
            Command::EvalPlan { .. } => "eval-plan",
            Command::Bench { .. } => "bench",
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        c.seed = v;
    }
    if let Some(v) = g.dt {
        c.graph.dt = v;
    }
    if let Some(v) = g.sp_mode {
        c.graph.sp_mode = v;
    }
    if let Some(v) = g.threshold {
        c.episode.threshold = v;
        c.eval.threshold = Some(v);
    }
    if let Some(v) = g.gamma {
        c.train.gamma = v;
    }
    if let Some(v) = g.alpha_pos {
        c.train.alpha_pos = v;
    }
    if let Some(v) = g.backend {
        c.backend.kind = v;
    }
    if let Some(v) = &g.rules {
        c.backend.rules = Some(v.clone());
    }
    if let Some(v) = &g.data {
        c.paths.data = Some(v.clone());
    }
    if let Some(v) = &g.cache {
        c.paths.cache = Some(v.clone());
    }
    if let Some(v) = &g.checkpoint {
        c.paths.checkpoint = Some(v.clone());
    }
    match &cli.command {
        Command::GenData { scenes, split } => {
            if let Some(v) = scenes {
                c.dataset.scenes = *v;
                if split.is_none() && *v != c.dataset.split.iter().sum::<usize>() {
                    // Keep the default 75/12.5/12.5 proportions.
                    let val = v / 8;
                    c.dataset.split = [v - 2 * val, val, val];
                }
            }
            if let Some(v) = split {
                c.dataset.split = *v;
            }
        }
        Command::Train { epochs: Some(v) } => c.train.epochs = *v,
        Command::EvalModel {
            recall_target: Some(v),
        } => c.eval.recall_target = *v,
        Command::RunEpisode { task, room } => {
            if let Some(v) = task {
                c.episode.task = v.clone();
            }
            if let Some(v) = room {
                c.episode.room = *v;
            }
        }
        Command::EvalPlan { scenes: Some(v) } => {
            c.eval.kitchen_scenes = *v;
            c.eval.bathroom_scenes = *v;
        }
        Command::Bench { entities: Some(v) } => c.bench.entities = *v,
        _ => {}
    }
    c.finish()
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = resolve(&cli).and_then(|config| commands::dispatch(&cli.command, &config, &cli.global.out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
