use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::forward::{forward_cached, gelu, gelu_grad, LayerNormCache};
use super::loss::focal_loss;
use super::{GraphTensors, ModelError, Params, Slot, TrainConfig};

/// Probabilities are kept this far from 0 and 1 before entering the loss.
pub(super) const P_CLAMP: f64 = 1e-12;

/// Gradient vector laid out exactly like `Params::values`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients {
            values: vec![0.0; len],
        }
    }

    fn add(&mut self, s: Slot, g: ArrayView2<f64>) {
        debug_assert_eq!(g.dim(), (s.rows, s.cols));
        for (dst, src) in self.values[s.range()].iter_mut().zip(g.iter()) {
            *dst += src;
        }
    }

    fn add_rows(&mut self, s: Slot, g: &Array2<f64>) {
        let sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.add(s, sum.view());
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn slot(&self, s: Slot) -> &[f64] {
        &self.values[s.range()]
    }
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gamma: ArrayView2<f64>,
    grads: &mut Gradients,
    g_slot: Slot,
    b_slot: Slot,
) -> Array2<f64> {
    grads.add_rows(g_slot, &(dy * &cache.xhat));
    grads.add_rows(b_slot, dy);
    let dxhat = dy * &gamma;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx = dx - &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * &cache.inv_std.view().insert_axis(Axis(1))
}

/// Probabilities clamped into the loss domain.
pub(super) fn clamp_probs(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| v.clamp(P_CLAMP, 1.0 - P_CLAMP)).collect()
}

/// Focal loss of one graph and its gradient with respect to every parameter.
pub fn grad(params: &Params, g: &GraphTensors, config: &TrainConfig) -> Result<(f64, Gradients), ModelError> {
    let (out, cache) = forward_cached(params, g)?;
    let mut grads = Gradients::zeros(params.len());
    let Some(head_cache) = cache.head else {
        return Ok((0.0, grads));
    };
    let (loss, dp) = focal_loss(&clamp_probs(&out.probs), &g.labels, config)?;
    let dlogit: Array1<f64> = dp
        .iter()
        .zip(&out.probs)
        .map(|(d, p)| d * p * (1.0 - p))
        .collect();

    let lay = &params.layout;
    let d = params.config.hidden;
    let n = g.n_nodes();

    // classifier head, averaged over both endpoint orders
    let hs = &lay.head;
    grads.values[hs.b2.offset] += dlogit.sum();
    let w2 = params.mat(hs.w2);
    let w1 = params.mat(hs.w1);
    let half = dlogit.mapv(|v| 0.5 * v).insert_axis(Axis(1));
    let mut dh = Array2::<f64>::zeros((n, d));
    for (z, u, first_is_i) in [
        (&head_cache.z_fwd, &head_cache.u_fwd, true),
        (&head_cache.z_rev, &head_cache.u_rev, false),
    ] {
        let a = u.mapv(gelu);
        grads.add(hs.w2, a.t().dot(&half).view());
        let du = half.dot(&w2.t()) * &u.mapv(gelu_grad);
        grads.add(hs.w1, z.t().dot(&du).view());
        grads.add_rows(hs.b1, &du);
        let dz = du.dot(&w1.t());
        for (e, &(i, j)) in g.edges.iter().enumerate() {
            let (a_node, b_node) = if first_is_i { (i, j) } else { (j, i) };
            let mut ra = dh.row_mut(a_node);
            ra += &dz.slice(s![e, 0..d]);
            let mut rb = dh.row_mut(b_node);
            rb += &dz.slice(s![e, d..2 * d]);
        }
    }

    let dh_dim = params.config.head_dim();
    let scale = 1.0 / (dh_dim as f64).sqrt();
    for (slots, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        // feed-forward sub-layer
        let dx2 = layer_norm_backward(
            &dh,
            &lc.ln2,
            params.mat(slots.ln2_g),
            &mut grads,
            slots.ln2_g,
            slots.ln2_b,
        );
        grads.add(slots.ff2_w, lc.ff_act.t().dot(&dx2).view());
        grads.add_rows(slots.ff2_b, &dx2);
        let dpre = dx2.dot(&params.mat(slots.ff2_w).t()) * &lc.ff_pre.mapv(gelu_grad);
        grads.add(slots.ff1_w, lc.h1.t().dot(&dpre).view());
        grads.add_rows(slots.ff1_b, &dpre);
        let dh1 = dx2 + dpre.dot(&params.mat(slots.ff1_w).t());

        // attention sub-layer
        let dx1 = layer_norm_backward(
            &dh1,
            &lc.ln1,
            params.mat(slots.ln1_g),
            &mut grads,
            slots.ln1_g,
            slots.ln1_b,
        );
        grads.add(slots.wo, lc.z.t().dot(&dx1).view());
        grads.add_rows(slots.bo, &dx1);
        let dz = dx1.dot(&params.mat(slots.wo).t());
        let mut dq = Array2::<f64>::zeros((n, d));
        let mut dk = Array2::<f64>::zeros((n, d));
        let mut dv = Array2::<f64>::zeros((n, d));
        let mut d_edge_w = Array2::<f64>::zeros((slots.edge_w.rows, slots.edge_w.cols));
        let mut d_edge_b = Array2::<f64>::zeros((1, slots.edge_b.cols));
        for (head, alpha) in lc.alpha.iter().enumerate() {
            let cols = s![.., head * dh_dim..(head + 1) * dh_dim];
            let dzk = dz.slice(cols);
            let dalpha = dzk.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&alpha.t().dot(&dzk));
            let row_dot = (alpha * &dalpha).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dscore = alpha * &(dalpha - &row_dot);
            dq.slice_mut(cols)
                .assign(&(dscore.dot(&lc.k.slice(cols)) * scale));
            dk.slice_mut(cols)
                .assign(&(dscore.t().dot(&lc.q.slice(cols)) * scale));
            // masked pairs have alpha = 0, hence dscore = 0: only edges matter
            for (e, &(i, j)) in g.edges.iter().enumerate() {
                let ds = dscore[[i, j]] + dscore[[j, i]];
                let mut col = d_edge_w.column_mut(head);
                col.scaled_add(ds, &g.edge_features.row(e));
                d_edge_b[[0, head]] += ds;
            }
        }
        grads.add(slots.edge_w, d_edge_w.view());
        grads.add(slots.edge_b, d_edge_b.view());
        grads.add(slots.wq, lc.h_in.t().dot(&dq).view());
        grads.add(slots.wk, lc.h_in.t().dot(&dk).view());
        grads.add(slots.wv, lc.h_in.t().dot(&dv).view());
        dh = dx1
            + dq.dot(&params.mat(slots.wq).t())
            + dk.dot(&params.mat(slots.wk).t())
            + dv.dot(&params.mat(slots.wv).t());
    }

    grads.add(lay.input_w, g.x.t().dot(&dh).view());
    grads.add_rows(lay.input_b, &dh);
    if grads.values.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NumericalFailure { layer: 0 });
    }
    Ok((loss, grads))
}

/// Summed loss and gradient over several graphs, reduced in input order.
pub fn grad_batch(
    params: &Params,
    batch: &[GraphTensors],
    config: &TrainConfig,
) -> Result<(f64, Gradients), ModelError> {
    let mut total = Gradients::zeros(params.len());
    let mut loss = 0.0;
    for g in batch {
        let (l, gr) = grad(params, g, config)?;
        loss += l;
        for (t, v) in total.values.iter_mut().zip(gr.values) {
            *t += v;
        }
    }
    Ok((loss, total))
}
