use super::{ModelError, TrainConfig};

/// Focal loss summed over edges, with class weights `alpha_pos` for positives
/// and `1 - alpha_pos` for negatives. Returns the loss and `dL/dp` per edge.
pub fn focal_loss(p: &[f64], y: &[bool], config: &TrainConfig) -> Result<(f64, Vec<f64>), ModelError> {
    focal_loss_with(p, y, config.gamma, config.alpha_pos, 1.0 - config.alpha_pos)
}

/// Focal loss with explicit per-class weights; `w_pos = w_neg = 1` and
/// `gamma = 0` is plain binary cross-entropy.
pub fn focal_loss_with(
    p: &[f64],
    y: &[bool],
    gamma: f64,
    w_pos: f64,
    w_neg: f64,
) -> Result<(f64, Vec<f64>), ModelError> {
    if p.len() != y.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} probabilities for {} labels",
            p.len(),
            y.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (index, (&pi, &yi)) in p.iter().zip(y).enumerate() {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(ModelError::ProbabilityDomain { index, value: pi });
        }
        // written in terms of p_t, then mapped back through dp_t/dp = ±1
        let (pt, w, sign) = if yi {
            (pi, w_pos, 1.0)
        } else {
            (1.0 - pi, w_neg, -1.0)
        };
        let q = 1.0 - pt;
        let log_pt = pt.ln();
        let mod_factor = q.powf(gamma);
        loss += -w * mod_factor * log_pt;
        let d_mod = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0)
        };
        let d_pt = -w * (-d_mod * log_pt + mod_factor / pt);
        grad.push(sign * d_pt);
    }
    Ok((loss, grad))
}
