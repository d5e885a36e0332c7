use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::{GraphTensors, LayerSlots, ModelError, Params, LN_EPS};

/// Additive bias for non-adjacent pairs. `exp(MASKED - max)` underflows to an
/// exact zero, so masked pairs receive no attention and no gradient.
pub const MASKED: f64 = -1e9;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct ForwardOutput {
    /// Final node embeddings, `|V| × d`.
    pub embeddings: Array2<f64>,
    pub logits: Vec<f64>,
    /// One probability per undirected edge, in `GraphTensors::edges` order.
    pub probs: Vec<f64>,
}

pub(super) struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(super) struct LayerCache {
    pub h_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub alpha: Vec<Array2<f64>>,
    pub z: Array2<f64>,
    pub ln1: LayerNormCache,
    pub h1: Array2<f64>,
    pub ff_pre: Array2<f64>,
    pub ff_act: Array2<f64>,
    pub ln2: LayerNormCache,
}

pub(super) struct HeadCache {
    /// Rows `[h_i, h_j, e]` and `[h_j, h_i, e]` per edge.
    pub z_fwd: Array2<f64>,
    pub z_rev: Array2<f64>,
    pub u_fwd: Array2<f64>,
    pub u_rev: Array2<f64>,
}

pub(super) struct Cache {
    pub layers: Vec<LayerCache>,
    pub head: Option<HeadCache>,
}

fn row(p: &Params, s: super::Slot) -> ArrayView2<'_, f64> {
    p.mat(s)
}

fn layer_norm(
    x: &Array2<f64>,
    gamma: ArrayView2<f64>,
    beta: ArrayView2<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &gamma + &beta;
    (y, LayerNormCache { xhat, inv_std })
}

/// Per-head attention bias, `heads` matrices of `|V| × |V|`: a linear map of
/// the edge features for adjacent pairs, zero on the diagonal, `MASKED`
/// elsewhere.
pub fn edge_bias(params: &Params, layer: usize, g: &GraphTensors) -> Vec<Array2<f64>> {
    let slots = &params.layout.layers[layer];
    let heads = params.config.heads;
    let n = g.n_nodes();
    let per_edge: Array2<f64> = if g.edges.is_empty() {
        Array2::zeros((0, heads))
    } else {
        g.edge_features.dot(&params.mat(slots.edge_w)) + &params.mat(slots.edge_b)
    };
    (0..heads)
        .map(|k| {
            Array2::from_shape_fn((n, n), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    match g.edge_index[i][j] {
                        Some(e) => per_edge[[e, k]],
                        None => MASKED,
                    }
                }
            })
        })
        .collect()
}

fn softmax_rows(mut s: Array2<f64>) -> Array2<f64> {
    for mut r in s.rows_mut() {
        let max = r.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        r.mapv_inplace(|v| (v - max).exp());
        let sum = r.sum();
        r /= sum;
    }
    s
}

struct AttentionOut {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    alpha: Vec<Array2<f64>>,
    z: Array2<f64>,
    out: Array2<f64>,
}

fn attention(p: &Params, slots: &LayerSlots, h: &Array2<f64>, bias: &[Array2<f64>]) -> AttentionOut {
    let dh = p.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = h.dot(&p.mat(slots.wq));
    let k = h.dot(&p.mat(slots.wk));
    let v = h.dot(&p.mat(slots.wv));
    let mut alpha = Vec::with_capacity(bias.len());
    let mut parts = Vec::with_capacity(bias.len());
    for (head, b) in bias.iter().enumerate() {
        let cols = s![.., head * dh..(head + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale + b;
        let a = softmax_rows(scores);
        parts.push(a.dot(&v.slice(cols)));
        alpha.push(a);
    }
    let views: Vec<_> = parts.iter().map(|x| x.view()).collect();
    let z = concatenate(Axis(1), &views).expect("head widths agree");
    let out = z.dot(&p.mat(slots.wo)) + &row(p, slots.bo);
    AttentionOut {
        q,
        k,
        v,
        alpha,
        z,
        out,
    }
}

/// One attention block's sub-layer: multi-head attention with the given
/// bias, output projection, residual and layer norm. Returns the new node
/// states and the per-head attention matrices.
pub fn attention_layer(
    params: &Params,
    layer: usize,
    h: &Array2<f64>,
    bias: &[Array2<f64>],
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let slots = &params.layout.layers[layer];
    let a = attention(params, slots, h, bias);
    let (y, _) = layer_norm(&(h + &a.out), params.mat(slots.ln1_g), params.mat(slots.ln1_b));
    (y, a.alpha)
}

fn finite(x: &Array2<f64>, layer: usize) -> Result<(), ModelError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NumericalFailure { layer })
    }
}

/// Full forward pass. Layer index in `NumericalFailure` is 0 for the input
/// projection, `1..=L` for attention blocks and `L + 1` for the head.
pub fn forward(params: &Params, g: &GraphTensors) -> Result<ForwardOutput, ModelError> {
    forward_cached(params, g).map(|(out, _)| out)
}

pub(super) fn forward_cached(
    params: &Params,
    g: &GraphTensors,
) -> Result<(ForwardOutput, Cache), ModelError> {
    g.check(&params.config)?;
    let lay = &params.layout;
    let mut h = g.x.dot(&params.mat(lay.input_w)) + &params.mat(lay.input_b);
    finite(&h, 0)?;
    let mut layers = Vec::with_capacity(lay.layers.len());
    for (l, slots) in lay.layers.iter().enumerate() {
        let bias = edge_bias(params, l, g);
        let a = attention(params, slots, &h, &bias);
        let (h1, ln1) = layer_norm(&(&h + &a.out), params.mat(slots.ln1_g), params.mat(slots.ln1_b));
        let ff_pre = h1.dot(&params.mat(slots.ff1_w)) + &params.mat(slots.ff1_b);
        let ff_act = ff_pre.mapv(gelu);
        let ff = ff_act.dot(&params.mat(slots.ff2_w)) + &params.mat(slots.ff2_b);
        let (h2, ln2) = layer_norm(&(&h1 + &ff), params.mat(slots.ln2_g), params.mat(slots.ln2_b));
        finite(&h2, l + 1)?;
        layers.push(LayerCache {
            h_in: std::mem::replace(&mut h, h2),
            q: a.q,
            k: a.k,
            v: a.v,
            alpha: a.alpha,
            z: a.z,
            ln1,
            h1,
            ff_pre,
            ff_act,
            ln2,
        });
    }

    if g.edges.is_empty() {
        let out = ForwardOutput {
            embeddings: h,
            logits: Vec::new(),
            probs: Vec::new(),
        };
        return Ok((out, Cache { layers, head: None }));
    }
    let hs = &lay.head;
    let src: Vec<usize> = g.edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = g.edges.iter().map(|e| e.1).collect();
    let hi = h.select(Axis(0), &src);
    let hj = h.select(Axis(0), &dst);
    let ef = g.edge_features.view();
    let z_fwd = concatenate(Axis(1), &[hi.view(), hj.view(), ef]).expect("rows agree");
    let z_rev = concatenate(Axis(1), &[hj.view(), hi.view(), ef]).expect("rows agree");
    let w1 = params.mat(hs.w1);
    let b1 = params.mat(hs.b1);
    let u_fwd = z_fwd.dot(&w1) + &b1;
    let u_rev = z_rev.dot(&w1) + &b1;
    let w2 = params.mat(hs.w2);
    let b2 = params.values[hs.b2.offset];
    let out_fwd = u_fwd.mapv(gelu).dot(&w2);
    let out_rev = u_rev.mapv(gelu).dot(&w2);
    let logits: Vec<f64> = out_fwd
        .iter()
        .zip(out_rev.iter())
        .map(|(a, b)| 0.5 * (a + b) + b2)
        .collect();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NumericalFailure {
            layer: lay.layers.len() + 1,
        });
    }
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();
    let out = ForwardOutput {
        embeddings: h,
        logits,
        probs,
    };
    let head = HeadCache {
        z_fwd,
        z_rev,
        u_fwd,
        u_rev,
    };
    Ok((
        out,
        Cache {
            layers,
            head: Some(head),
        },
    ))
}
