//! Shared fixtures: random graphs, perturbed parameters, and a scalar-loop
//! reference forward pass that shares no code with the library's ndarray path.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskgraph::model::{init_model, GraphTensors, ModelConfig, Params, Slot};

pub fn small_config(
    layers: usize,
    heads: usize,
    hidden: usize,
    d_node: usize,
    d_edge: usize,
    seed: u64,
) -> ModelConfig {
    ModelConfig {
        layers,
        heads,
        hidden,
        ffn: 2 * hidden,
        d_node,
        d_edge,
        seed,
    }
}

/// Initialized parameters with every entry (biases and norms included)
/// jittered so no gradient is structurally zero.
pub fn random_params(config: &ModelConfig, rng: &mut ChaCha8Rng, scale: f64) -> Params {
    let mut p = init_model(config).unwrap();
    for v in &mut p.values {
        *v += rng.random_range(-scale..scale);
    }
    p
}

pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    d_node: usize,
    d_edge: usize,
    density: f64,
) -> GraphTensors {
    let x = Array2::from_shape_fn((n, d_node), |_| rng.random_range(-1.0..1.0));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    let ef = Array2::from_shape_fn((edges.len(), d_edge), |_| rng.random_range(-1.0..1.0));
    let labels = (0..edges.len()).map(|_| rng.random::<f64>() < 0.3).collect();
    GraphTensors::new(x, edges, ef, labels).unwrap()
}

fn at(p: &Params, s: Slot, r: usize, c: usize) -> f64 {
    p.values[s.offset + r * s.cols + c]
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn linear(p: &Params, w: Slot, b: Option<Slot>, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
    input
        .iter()
        .map(|row| {
            (0..w.cols)
                .map(|c| {
                    let mut acc = b.map_or(0.0, |b| at(p, b, 0, c));
                    for (r, v) in row.iter().enumerate() {
                        acc += v * at(p, w, r, c);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn layer_norm(p: &Params, g: Slot, b: Slot, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            r.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / sd * at(p, g, 0, c) + at(p, b, 0, c))
                .collect()
        })
        .collect()
}

/// Reference forward: returns per-layer attention weights and edge
/// probabilities, computed entry by entry.
pub fn oracle_forward(p: &Params, g: &GraphTensors) -> (Vec<Vec<Vec<Vec<f64>>>>, Vec<f64>) {
    let c = &p.config;
    let n = g.n_nodes();
    let dh = c.hidden / c.heads;
    let x: Vec<Vec<f64>> = g.x.rows().into_iter().map(|r| r.to_vec()).collect();
    let ef: Vec<Vec<f64>> = g.edge_features.rows().into_iter().map(|r| r.to_vec()).collect();
    let edge_of = |i: usize, j: usize| g.edges.iter().position(|&(a, b)| (a, b) == (i.min(j), i.max(j)));
    let lay = &p.layout;
    let mut h = linear(p, lay.input_w, Some(lay.input_b), &x);
    let mut all_alpha = Vec::new();
    for l in &lay.layers {
        let q = linear(p, l.wq, None, &h);
        let k = linear(p, l.wk, None, &h);
        let v = linear(p, l.wv, None, &h);
        let mut z = vec![vec![0.0; c.hidden]; n];
        let mut layer_alpha = Vec::new();
        for head in 0..c.heads {
            let mut alpha = vec![vec![0.0; n]; n];
            for i in 0..n {
                let mut logits: Vec<Option<f64>> = vec![None; n];
                for (j, slot) in logits.iter_mut().enumerate() {
                    let bias = if i == j {
                        Some(0.0)
                    } else {
                        edge_of(i, j).map(|e| {
                            let mut b = at(p, l.edge_b, 0, head);
                            for (f, val) in ef[e].iter().enumerate() {
                                b += val * at(p, l.edge_w, f, head);
                            }
                            b
                        })
                    };
                    if let Some(bias) = bias {
                        let mut dot = 0.0;
                        for t in 0..dh {
                            dot += q[i][head * dh + t] * k[j][head * dh + t];
                        }
                        *slot = Some(dot / (dh as f64).sqrt() + bias);
                    }
                }
                let max = logits.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let denom: f64 = logits.iter().flatten().map(|v| (v - max).exp()).sum();
                for j in 0..n {
                    if let Some(s) = logits[j] {
                        alpha[i][j] = (s - max).exp() / denom;
                    }
                }
                for t in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += alpha[i][j] * v[j][head * dh + t];
                    }
                    z[i][head * dh + t] = acc;
                }
            }
            layer_alpha.push(alpha);
        }
        let o = linear(p, l.wo, Some(l.bo), &z);
        let res: Vec<Vec<f64>> = h
            .iter()
            .zip(&o)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let h1 = layer_norm(p, l.ln1_g, l.ln1_b, &res);
        let pre = linear(p, l.ff1_w, Some(l.ff1_b), &h1);
        let act: Vec<Vec<f64>> = pre.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        let ff = linear(p, l.ff2_w, Some(l.ff2_b), &act);
        let res2: Vec<Vec<f64>> = h1
            .iter()
            .zip(&ff)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        h = layer_norm(p, l.ln2_g, l.ln2_b, &res2);
        all_alpha.push(layer_alpha);
    }
    let hd = &lay.head;
    let read_out = |zin: Vec<f64>| {
        let u = linear(p, hd.w1, Some(hd.b1), &[zin]);
        let mut out = 0.0;
        for (r, &uv) in u[0].iter().enumerate() {
            out += gelu(uv) * at(p, hd.w2, r, 0);
        }
        out
    };
    let probs = g
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let fwd: Vec<f64> = h[i].iter().chain(&h[j]).chain(&ef[e]).copied().collect();
            let rev: Vec<f64> = h[j].iter().chain(&h[i]).chain(&ef[e]).copied().collect();
            let logit = 0.5 * (read_out(fwd) + read_out(rev)) + at(p, hd.b2, 0, 0);
            1.0 / (1.0 + (-logit).exp())
        })
        .collect();
    (all_alpha, probs)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Trained {
    pub data: riskgraph::scene::DatasetSplit,
    pub cache: riskgraph::annotate::AnnotationCache,
    pub graph_config: riskgraph::graph::GraphConfig,
    pub params: Params,
}

/// Default dataset (seed 1) and default training, shared within one test binary.
pub fn trained() -> &'static Trained {
    use riskgraph::annotate::builtin_risk_table;
    use riskgraph::graph::{build_graphs, GraphConfig};
    use riskgraph::model::{graph_tensors, train, TrainConfig};
    use riskgraph::scene::generate_dataset;
    static CELL: std::sync::OnceLock<Trained> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_dataset(120, (90, 15, 15), 1).unwrap();
        let cache = builtin_risk_table();
        let graph_config = GraphConfig::default();
        let tr = graph_tensors(&build_graphs(&data.train, &cache, &graph_config).unwrap()).unwrap();
        let va = graph_tensors(&build_graphs(&data.val, &cache, &graph_config).unwrap()).unwrap();
        let init = init_model(&ModelConfig::default()).unwrap();
        let (params, _) = train(&init, &tr, &va, &TrainConfig::default()).unwrap();
        Trained {
            data,
            cache,
            graph_config,
            params,
        }
    })
}
