use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{clamp_probs, grad};
use super::forward::forward;
use super::loss::focal_loss;
use super::{GraphTensors, ModelError, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Focusing exponent.
    pub gamma: f64,
    /// Weight of positive edges; negatives get `1 - alpha_pos`.
    pub alpha_pos: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Threshold at which validation recall/precision are recorded.
    pub probe_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            gamma: 2.0,
            alpha_pos: 0.9,
            clip_norm: 1.0,
            seed: 0,
            probe_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gamma >= 0.0) {
            return Err(ModelError::BadConfig(format!(
                "gamma {} must be >= 0",
                self.gamma
            )));
        }
        if !(self.alpha_pos > 0.0 && self.alpha_pos < 1.0) {
            return Err(ModelError::BadConfig(format!(
                "alpha_pos {} must be in (0, 1)",
                self.alpha_pos
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(ModelError::BadConfig(
                "learning rate and clip norm must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean focal loss per edge.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Absent when no validation set was given.
    pub val_recall: Option<f64>,
    pub val_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * grad[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Mean per-edge loss plus recall and precision at `threshold`.
pub fn evaluate_loss(
    params: &Params,
    graphs: &[GraphTensors],
    config: &TrainConfig,
    threshold: f64,
) -> Result<(f64, f64, f64), ModelError> {
    let (mut loss, mut edges) = (0.0, 0usize);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for g in graphs {
        let out = forward(params, g)?;
        if out.probs.is_empty() {
            continue;
        }
        loss += focal_loss(&clamp_probs(&out.probs), &g.labels, config)?.0;
        edges += out.probs.len();
        for (&p, &y) in out.probs.iter().zip(&g.labels) {
            match (p >= threshold, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let mean = if edges == 0 { 0.0 } else { loss / edges as f64 };
    let recall = if tp + fneg == 0 {
        1.0
    } else {
        tp as f64 / (tp + fneg) as f64
    };
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    Ok((mean, recall, precision))
}

/// Adam with one step per graph, global-norm clipping and a seeded shuffle
/// each epoch. Keeps the parameters with the lowest validation loss (train
/// loss when `val` is empty).
pub fn train(
    init: &Params,
    train_set: &[GraphTensors],
    val: &[GraphTensors],
    config: &TrainConfig,
) -> Result<(Params, TrainHistory), ModelError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mut params = init.clone();
    let mut adam = Adam {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Params)> = None;
    let train_edges: usize = train_set.iter().map(|g| g.edges.len()).sum::<usize>().max(1);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let (loss, mut g) = match grad(&params, &train_set[k], config) {
                Err(ModelError::NumericalFailure { .. }) => {
                    return Err(ModelError::TrainingDiverged { epoch })
                }
                other => other?,
            };
            if !loss.is_finite() {
                return Err(ModelError::TrainingDiverged { epoch });
            }
            total += loss;
            let norm = g.norm();
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                g.values.iter_mut().for_each(|v| *v *= s);
            }
            adam.step(&mut params.values, &g.values, config.learning_rate);
        }
        let train_loss = total / train_edges as f64;
        let (val_loss, val_recall, val_precision) = if val.is_empty() {
            (train_loss, None, None)
        } else {
            let (l, r, p) = evaluate_loss(&params, val, config, config.probe_threshold)?;
            (l, Some(r), Some(p))
        };
        if !val_loss.is_finite() {
            return Err(ModelError::TrainingDiverged { epoch });
        }
        debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} recall {val_recall:?} precision {val_precision:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_recall,
            val_precision,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            history.best_epoch = epoch;
        }
    }
    info!(
        "trained {} epochs, best epoch {}",
        history.epochs.len(),
        history.best_epoch
    );
    let params = best.map_or(params, |(_, p)| p);
    Ok((params, history))
}
