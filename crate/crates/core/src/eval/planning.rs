use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::annotate::AnnotationCache;
use crate::episode::{run_batch, EpisodeConfig, EpisodeError, EpisodeTrace, HazardSource};
use crate::model::Params;
use crate::planner::{builtin_rules, Complexity, MockPlanner, PlannerBackend, RuleSet, TaskSpec};
use crate::scene::Scene;

/// Percentages over a group of episodes. SNR and RHS are `None` when no
/// episode in the group had a hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub episodes: usize,
    pub hazard_episodes: usize,
    pub tsr: f64,
    pub snr: Option<f64>,
    pub rhs: Option<f64>,
}

impl Rates {
    fn of(traces: &[&EpisodeTrace]) -> Rates {
        let pct = |k: usize, n: usize| 100.0 * k as f64 / n as f64;
        let n = traces.len();
        let hazard: Vec<&&EpisodeTrace> = traces.iter().filter(|t| t.hazard_present).collect();
        let h = hazard.len();
        let count = |f: fn(&EpisodeTrace) -> bool| hazard.iter().filter(|t| f(t)).count();
        Rates {
            episodes: n,
            hazard_episodes: h,
            tsr: pct(traces.iter().filter(|t| t.task_success).count(), n),
            snr: (h > 0).then(|| pct(count(|t| t.safety_noticed), h)),
            rhs: (h > 0).then(|| pct(count(|t| t.safety_handled), h)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningMetrics {
    pub overall: Rates,
    /// Only complexities that occur in the traces.
    pub by_complexity: BTreeMap<Complexity, Rates>,
}

/// TSR over all episodes; SNR and RHS over hazard-present episodes.
pub fn planning_metrics(traces: &[EpisodeTrace]) -> Result<PlanningMetrics, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let all: Vec<&EpisodeTrace> = traces.iter().collect();
    let mut by_complexity = BTreeMap::new();
    for c in Complexity::ALL {
        let group: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.complexity == c).collect();
        if !group.is_empty() {
            by_complexity.insert(c, Rates::of(&group));
        }
    }
    Ok(PlanningMetrics {
        overall: Rates::of(&all),
        by_complexity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub backend: String,
    pub hazard_source: String,
    pub metrics: PlanningMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub rows: Vec<BaselineRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1}"))
}

impl BaselineReport {
    pub fn row(&self, name: &str) -> Option<&BaselineRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["method".to_string(), "TSR".into(), "SNR".into(), "RHS".into()];
        for c in Complexity::ALL {
            for m in ["TSR", "SNR", "RHS"] {
                header.push(format!("{}:{m}", c.as_str()));
            }
        }
        let mut table = vec![header];
        for r in &self.rows {
            let o = &r.metrics.overall;
            let mut line = vec![r.name.clone(), format!("{:.1}", o.tsr), cell(o.snr), cell(o.rhs)];
            for c in Complexity::ALL {
                match r.metrics.by_complexity.get(&c) {
                    Some(x) => line.extend([format!("{:.1}", x.tsr), cell(x.snr), cell(x.rhs)]),
                    None => line.extend(["n/a".to_string(), "n/a".into(), "n/a".into()]),
                }
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|k| table.iter().map(|row| row[k].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(k, (c, &w))| {
                    if k == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "backend",
            "hazard_source",
            "group",
            "episodes",
            "hazard_episodes",
            "tsr",
            "snr",
            "rhs",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            let groups = std::iter::once(("all", &r.metrics.overall))
                .chain(r.metrics.by_complexity.iter().map(|(c, x)| (c.as_str(), x)));
            for (g, x) in groups {
                w.write_record([
                    r.name.clone(),
                    r.backend.clone(),
                    r.hazard_source.clone(),
                    g.to_string(),
                    x.episodes.to_string(),
                    x.hazard_episodes.to_string(),
                    format!("{:.4}", x.tsr),
                    x.snr.map_or(String::new(), |v| format!("{v:.4}")),
                    x.rhs.map_or(String::new(), |v| format!("{v:.4}")),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// The five offline methods: planner backend plus hazard source.
pub fn baseline_methods() -> Vec<(&'static str, MockPlanner, HazardSource)> {
    let ltl = |name: &str, set| HazardSource::Ltl {
        name: name.to_string(),
        rules: builtin_rules(set),
    };
    vec![
        ("llm_only", MockPlanner::new(), HazardSource::None),
        (
            "safe_prompting",
            MockPlanner::with_safety_prompt(),
            HazardSource::PromptOnly,
        ),
        (
            "ltl_full",
            MockPlanner::with_safety_prompt(),
            ltl("full", RuleSet::Full),
        ),
        (
            "ltl_partial",
            MockPlanner::with_safety_prompt(),
            ltl("partial", RuleSet::Partial),
        ),
        ("graphormer", MockPlanner::new(), HazardSource::Graphormer),
    ]
}

/// Every scene × task under every method, with the mock planners. The
/// hazard source in `base` is replaced per method.
pub fn compare_baselines(
    scenes: &[Scene],
    tasks: &[TaskSpec],
    model: &Params,
    cache: &AnnotationCache,
    base: &EpisodeConfig,
) -> Result<(BaselineReport, Vec<(String, Vec<EpisodeTrace>)>), EpisodeError> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (name, planner, source) in baseline_methods() {
        let config = EpisodeConfig {
            hazard_source: source.clone(),
            ..base.clone()
        };
        let traces = run_batch(scenes, tasks, &planner, Some(model), cache, &config)?;
        let metrics = planning_metrics(&traces).map_err(|e| EpisodeError::BadConfig(e.to_string()))?;
        rows.push(BaselineRow {
            name: name.to_string(),
            backend: planner.id(),
            hazard_source: source.label(),
            metrics,
        });
        all.push((name.to_string(), traces));
    }
    Ok((BaselineReport { rows }, all))
}
