//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags. The resolved value is written next to every output.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use riskgraph::episode::{EpisodeConfig, HazardSource};
use riskgraph::eval::DEFAULT_RECALL_TARGET;
use riskgraph::graph::GraphConfig;
use riskgraph::model::{ModelConfig, TrainConfig};
use riskgraph::scene::{DatasetConfig, RoomType, DEFAULT_MAX_ENTITIES};

use crate::CliError;

pub const TOOL_VERSION: &str = concat!("riskgraph ", env!("CARGO_PKG_VERSION"));
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Deterministic offline planner with the graph hazard detector.
    #[default]
    Mock,
    /// Remote chat-completion endpoint; needs the API key in the environment.
    Http,
    /// Offline planner told to mind safety, no detector.
    SafePrompt,
    /// Offline planner with the distance-rule monitor.
    Ltl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub scenes: usize,
    pub split: [usize; 3],
    pub extra_objects: [usize; 2],
    pub max_entities: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetSection {
            scenes: 120,
            split: [90, 15, 15],
            extra_objects: [d.extra_objects.0, d.extra_objects.1],
            max_entities: DEFAULT_MAX_ENTITIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub threshold: f64,
    pub max_replans: usize,
    pub max_steps: usize,
    pub task: String,
    pub room: RoomType,
    pub record_timings: bool,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        EpisodeSection {
            threshold: e.threshold,
            max_replans: e.max_replans,
            max_steps: e.max_steps,
            task: "prepare a meal".into(),
            room: RoomType::Kitchen,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub recall_target: f64,
    /// Extra operating point reported by `eval-model`.
    pub threshold: Option<f64>,
    pub kitchen_scenes: usize,
    pub bathroom_scenes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            recall_target: DEFAULT_RECALL_TARGET,
            threshold: None,
            kitchen_scenes: 20,
            bathroom_scenes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub entities: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { entities: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Rule file for the `ltl` backend; the built-in full set otherwise.
    pub rules: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Mock,
            rules: None,
            endpoint: "http://localhost:8080/v1/complete".into(),
            model: "default".into(),
        }
    }
}

/// Inputs produced by earlier subcommands. Anything left unset is rebuilt
/// from the rest of the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Everything a run depends on. `seed` feeds dataset generation, model
/// initialization and training order alike.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub episode: EpisodeSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub backend: BackendSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Copies the single seed into the model and trainer and checks ranges.
    pub fn finish(mut self) -> Result<Self, CliError> {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        let d = &self.dataset;
        if d.split.iter().sum::<usize>() != d.scenes {
            return Err(CliError::Usage(format!(
                "split {:?} does not add up to {} scenes",
                d.split, d.scenes
            )));
        }
        if d.extra_objects[0] > d.extra_objects[1] {
            return Err(CliError::Usage(format!(
                "extra_objects {:?} is not a range",
                d.extra_objects
            )));
        }
        self.graph
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.episode_config(HazardSource::None)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.eval.recall_target) {
            return Err(CliError::Usage(format!(
                "recall target {} outside [0, 1]",
                self.eval.recall_target
            )));
        }
        if let Some(t) = self.eval.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Usage(format!("threshold {t} outside [0, 1]")));
            }
        }
        if self.bench.entities < 2 {
            return Err(CliError::Usage("bench needs at least 2 entities".into()));
        }
        Ok(self)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            dt: self.graph.dt,
            extra_objects: (self.dataset.extra_objects[0], self.dataset.extra_objects[1]),
            max_entities: self.dataset.max_entities,
        }
    }

    pub fn split(&self) -> (usize, usize, usize) {
        let s = self.dataset.split;
        (s[0], s[1], s[2])
    }

    pub fn episode_config(&self, hazard_source: HazardSource) -> EpisodeConfig {
        EpisodeConfig {
            threshold: self.episode.threshold,
            max_replans: self.episode.max_replans,
            max_steps: self.episode.max_steps,
            hazard_source,
            graph: self.graph.clone(),
            record_timings: self.episode.record_timings,
        }
    }

    pub fn to_toml(&self) -> String {
        let body = toml::to_string_pretty(self).expect("config serializes");
        format!("# {TOOL_VERSION}\n{body}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.eval.threshold = Some(0.21);
        c.paths.checkpoint = Some("m.ckpt".into());
        c.backend.kind = BackendKind::SafePrompt;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: RunConfig = toml::from_str("seed = 3\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.gamma, TrainConfig::default().gamma);
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 2\n").is_err());
    }

    #[test]
    fn bad_split_is_rejected() {
        let mut c = RunConfig::default();
        c.dataset.split = [90, 15, 14];
        assert!(matches!(c.finish(), Err(CliError::Usage(_))));
    }
}
