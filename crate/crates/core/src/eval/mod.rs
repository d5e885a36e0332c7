//! Classifier metrics, planning metrics, baseline comparison and timing.

mod bench;
mod planning;
mod pr;

use thiserror::Error;

pub use bench::{bench, bench_scene, BenchReport, StageResult, BENCH_RUNS};
pub use planning::{
    baseline_methods, compare_baselines, planning_metrics, BaselineReport, BaselineRow, PlanningMetrics,
    Rates,
};
pub use pr::{curve_csv, curve_svg, point_at, pr_curve, select_threshold, PRPoint, ThresholdChoice};

/// Recall level the operating threshold is chosen for by default.
pub const DEFAULT_RECALL_TARGET: f64 = 0.90;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no positive labels")]
    NoPositives,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score is NaN")]
    NanScore,
    #[error("empty precision/recall curve")]
    EmptyCurve,
    #[error("no episodes to summarize")]
    NoEpisodes,
}

/// Uniform(0, 1) scores from a seeded generator; the no-skill reference.
pub fn uniform_scores(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}
