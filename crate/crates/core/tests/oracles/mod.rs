//! Independent reference implementations and the checks built on them.
//!
//! Shared by the core integration tests and the bench acceptance target.
//! Each `check_*` function returns the measured worst-case error so callers
//! can compare it against their own tolerance.

#![allow(dead_code)]

use std::sync::Arc;

use deepgnn::autodiff::{Tape, Var};
use deepgnn::config::Com;
use deepgnn::norm::{self, GroupNormVars};
use deepgnn::rng::Rng;
use deepgnn::sparse::{self, CsrGraph, CsrMatrix};
use deepgnn::tensor::Tensor;
use deepgnn::{layers, skip, train, Result};

pub type T = Tensor<f64>;

pub const FD_STEP: f64 = 1e-6;

pub fn random_tensor(rows: usize, cols: usize, rng: &mut Rng) -> T {
    Tensor::from_fn(rows, cols, |_, _| 2.0 * rng.uniform() - 1.0)
}

/// Naive triple loop.
pub fn dense_matmul(a: &T, b: &T) -> T {
    Tensor::from_fn(a.rows(), b.cols(), |i, j| {
        let mut s = 0.0;
        for k in 0..a.cols() {
            s += a.get(i, k) * b.get(k, j);
        }
        s
    })
}

/// `(I + D)^-1/2 (I + A) (I + D)^-1/2` on a dense matrix.
pub fn dense_sym_normalize(a: &T) -> T {
    let n = a.rows();
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    Tensor::from_fn(n, n, |i, j| {
        let m = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
        m / ((1.0 + deg[i]).sqrt() * (1.0 + deg[j]).sqrt())
    })
}

/// `p_j = sum_{i in S} A_ij^2 / sum_{i in S, k} A_ik^2` on a dense matrix.
pub fn dense_ladies_probs(a: &T, selected: &[usize]) -> Vec<f64> {
    let n = a.cols();
    let mut mass = vec![0.0; n];
    for &i in selected {
        for (j, m) in mass.iter_mut().enumerate() {
            *m += a.get(i, j) * a.get(i, j);
        }
    }
    let total: f64 = mass.iter().sum();
    mass.iter()
        .map(|m| if total > 0.0 { m / total } else { 0.0 })
        .collect()
}

/// Exact inclusion probabilities of sequential weighted sampling without
/// replacement of `s` items, by enumerating every ordered draw sequence.
pub fn exact_inclusion(probs: &[f64], s: usize) -> Vec<f64> {
    fn walk(probs: &[f64], taken: &mut Vec<bool>, left: usize, weight: f64, out: &mut [f64]) {
        if left == 0 {
            return;
        }
        let remaining: f64 = probs
            .iter()
            .zip(taken.iter())
            .filter(|(_, &t)| !t)
            .map(|(p, _)| p)
            .sum();
        if remaining <= 0.0 {
            return;
        }
        for j in 0..probs.len() {
            if taken[j] || probs[j] == 0.0 {
                continue;
            }
            let w = weight * probs[j] / remaining;
            out[j] += w;
            taken[j] = true;
            walk(probs, taken, left - 1, w, out);
            taken[j] = false;
        }
    }
    let mut out = vec![0.0; probs.len()];
    walk(probs, &mut vec![false; probs.len()], s, 1.0, &mut out);
    out
}

/// Erdos-Renyi style random undirected graph with a few isolated nodes.
pub fn random_graph(n: usize, density: f64, rng: &mut Rng) -> CsrGraph<f64> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(density) {
                edges.push((i, j));
            }
        }
    }
    CsrGraph::from_edges(n, &edges, true).unwrap()
}

/// Random graph with edge weights in `(0, 1]`.
pub fn random_weighted_graph(n: usize, density: f64, rng: &mut Rng) -> CsrGraph<f64> {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(density) {
                let w = 1.0 - rng.uniform() * 0.9;
                triplets.push((i, j, w));
                triplets.push((j, i, w));
            }
        }
    }
    CsrGraph::new(CsrMatrix::from_triplets(n, n, triplets).unwrap(), true).unwrap()
}

/// `|a - b| / max(|a|, |b|, 1)`: relative above unit magnitude, absolute below.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite-difference check of `f` at `inputs`. The output of `f` is
/// contracted with a fixed random weight so every entry gets a distinct
/// upstream gradient. Returns the worst relative error.
pub fn grad_check(inputs: &[T], f: &LossFn) -> f64 {
    let loss_of = |values: &[T], tape: &mut Tape<f64>, trainable: bool| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = values
            .iter()
            .map(|v| {
                if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        let out = f(tape, &vars).expect("forward succeeds");
        let (r, c) = tape.value(out).shape();
        let mut wrng = Rng::new(0xfeed + (r * 131 + c) as u64);
        let w = tape.constant(random_tensor(r, c, &mut wrng));
        let prod = tape.mul(out, w).unwrap();
        (tape.sum(prod).unwrap(), vars)
    };
    let mut tape = Tape::new();
    let (loss, vars) = loss_of(inputs, &mut tape, true);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).unwrap();
        for e in 0..input.data().len() {
            let eval = |delta: f64| {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[e] += delta;
                let mut tape = Tape::new();
                let (loss, _) = loss_of(&shifted, &mut tape, false);
                tape.value(loss).get(0, 0)
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[e], numeric));
        }
    }
    worst
}

pub type LossFn = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

type GradCase = (&'static str, Vec<T>, Box<LossFn>);

/// Every differentiable primitive and composite, with random inputs in
/// `[-1, 1]` (shifted positive where the op needs it).
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = Rng::new(seed);
    let mut r = |rows, cols| random_tensor(rows, cols, &mut rng);
    let pos = |t: T| t.map(|v| v.abs() + 0.5);
    let graph = {
        let mut g = Rng::new(seed ^ 0x5a5a);
        random_weighted_graph(6, 0.5, &mut g)
    };
    let rhat = Arc::clone(graph.normalized().matrix());
    let feats = {
        let mut g = Rng::new(seed ^ 0x77);
        Arc::new(CsrMatrix::from_dense(
            &random_tensor(6, 5, &mut g).map(|v| if v > 0.3 { v } else { 0.0 }),
        ))
    };
    let mut cases: Vec<GradCase> = vec![
        (
            "matmul",
            vec![r(4, 3), r(3, 2)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "add",
            vec![r(3, 3), r(3, 3)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![r(3, 3), r(3, 3)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![r(3, 3), r(3, 3)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        ("scale", vec![r(3, 3)], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("relu", vec![r(3, 3)], Box::new(|t, v| t.relu(v[0]))),
        ("exp", vec![r(3, 3)], Box::new(|t, v| t.exp(v[0]))),
        ("log", vec![pos(r(3, 3))], Box::new(|t, v| t.log(v[0]))),
        ("sigmoid", vec![r(3, 3)], Box::new(|t, v| t.sigmoid(v[0]))),
        (
            "powf",
            vec![pos(r(3, 3))],
            Box::new(|t, v| t.powf(v[0], -0.7)),
        ),
        ("recip", vec![pos(r(3, 3))], Box::new(|t, v| t.recip(v[0]))),
        (
            "add_broadcast_row",
            vec![r(4, 3), r(1, 3)],
            Box::new(|t, v| t.add_broadcast(v[0], v[1])),
        ),
        (
            "add_broadcast_col",
            vec![r(4, 3), r(4, 1)],
            Box::new(|t, v| t.add_broadcast(v[0], v[1])),
        ),
        (
            "add_broadcast_scalar",
            vec![r(4, 3), r(1, 1)],
            Box::new(|t, v| t.add_broadcast(v[0], v[1])),
        ),
        (
            "mul_broadcast_row",
            vec![r(4, 3), r(1, 3)],
            Box::new(|t, v| t.mul_broadcast(v[0], v[1])),
        ),
        (
            "mul_broadcast_col",
            vec![r(4, 3), r(4, 1)],
            Box::new(|t, v| t.mul_broadcast(v[0], v[1])),
        ),
        (
            "mul_broadcast_scalar",
            vec![r(4, 3), r(1, 1)],
            Box::new(|t, v| t.mul_broadcast(v[0], v[1])),
        ),
        (
            "transpose",
            vec![r(2, 5)],
            Box::new(|t, v| t.transpose(v[0])),
        ),
        ("row_mean", vec![r(4, 3)], Box::new(|t, v| t.row_mean(v[0]))),
        ("row_std", vec![r(4, 3)], Box::new(|t, v| t.row_std(v[0]))),
        ("row_max", vec![r(4, 3)], Box::new(|t, v| t.row_max(v[0]))),
        ("col_mean", vec![r(4, 3)], Box::new(|t, v| t.col_mean(v[0]))),
        ("col_std", vec![r(4, 3)], Box::new(|t, v| t.col_std(v[0]))),
        ("sum", vec![r(3, 2)], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![r(3, 2)], Box::new(|t, v| t.mean(v[0]))),
        (
            "concat_cols",
            vec![r(3, 2), r(3, 1), r(3, 2)],
            Box::new(|t, v| t.concat_cols(v)),
        ),
        (
            "slice_cols",
            vec![r(3, 4)],
            Box::new(|t, v| t.slice_cols(v[0], 1, 2)),
        ),
        (
            "max_stack",
            vec![r(3, 3), r(3, 3), r(3, 3)],
            Box::new(|t, v| t.max_stack(v)),
        ),
        (
            "softmax_rows",
            vec![r(3, 4)],
            Box::new(|t, v| t.softmax_rows(v[0])),
        ),
        (
            "log_softmax_rows",
            vec![r(3, 4)],
            Box::new(|t, v| t.log_softmax_rows(v[0])),
        ),
        (
            "select_rows",
            vec![r(4, 2)],
            Box::new(|t, v| t.select_rows(v[0], vec![3, 0, 3].into())),
        ),
        (
            "dropout",
            vec![r(4, 4)],
            Box::new(|t, v| t.dropout(v[0], 0.5, &mut Rng::new(42))),
        ),
        (
            "unit_below",
            vec![r(3, 3)],
            Box::new(|t, v| t.unit_below(v[0], -2.0)),
        ),
        (
            "pair_norm",
            vec![r(5, 3)],
            Box::new(|t, v| norm::pair_norm(t, v[0], 1.3)),
        ),
        (
            "node_norm",
            vec![r(5, 3)],
            Box::new(|t, v| norm::node_norm(t, v[0], 2.0)),
        ),
        (
            "mean_norm",
            vec![r(5, 3)],
            Box::new(|t, v| norm::mean_norm(t, v[0])),
        ),
        (
            "batch_norm",
            vec![r(5, 3), r(1, 3), r(1, 3)],
            Box::new(|t, v| norm::batch_norm(t, v[0], v[1], v[2])),
        ),
        (
            "group_norm",
            vec![r(5, 3), r(3, 2), r(1, 3), r(1, 3), r(1, 3), r(1, 3)],
            Box::new(|t, v| {
                let vars = GroupNormVars {
                    assign: v[1],
                    gamma: vec![v[2], v[3]],
                    beta: vec![v[4], v[5]],
                };
                norm::group_norm(t, v[0], &vars, 0.3)
            }),
        ),
        (
            "comb_norm",
            vec![r(5, 3), r(3, 2), r(1, 3), r(1, 3), r(1, 3), r(1, 3)],
            Box::new(|t, v| {
                let vars = GroupNormVars {
                    assign: v[1],
                    gamma: vec![v[2], v[3]],
                    beta: vec![v[4], v[5]],
                };
                norm::comb_norm(t, v[0], &vars, 0.3, 2.0)
            }),
        ),
        (
            "com_concat",
            vec![r(4, 2), r(4, 2), r(4, 2), r(6, 2)],
            Box::new(|t, v| skip::com_apply(t, Com::Concat, &v[..3], Some(v[3]))),
        ),
        (
            "com_maxpool",
            vec![r(4, 2), r(4, 2), r(4, 2)],
            Box::new(|t, v| skip::com_apply(t, Com::Maxpool, v, None)),
        ),
        (
            "com_attention",
            vec![r(4, 2), r(4, 2), r(4, 2), r(2, 1)],
            Box::new(|t, v| skip::com_apply(t, Com::Attention, &v[..3], Some(v[3]))),
        ),
        (
            "com_attention_softmax",
            vec![r(4, 2), r(4, 2), r(4, 2), r(2, 1)],
            Box::new(|t, v| skip::com_apply(t, Com::AttentionSoftmax, &v[..3], Some(v[3]))),
        ),
        (
            "ce_loss_smoothed",
            vec![r(5, 3)],
            Box::new(|t, v| train::ce_loss_smoothed(t, v[0], &[0, 2, 1, 1, 0], 0.1)),
        ),
    ];
    let gcn_graph = graph.clone();
    cases.push((
        "spmm",
        vec![r(6, 3)],
        Box::new(move |t, v| t.spmm(&rhat, v[0])),
    ));
    cases.push((
        "spmm_features",
        vec![r(5, 3)],
        Box::new(move |t, v| t.spmm(&feats, v[0])),
    ));
    cases.push((
        "identity_mapping_layer",
        vec![r(6, 3), r(3, 3)],
        Box::new(move |t, v| {
            layers::identity_mapping_layer(t, gcn_graph.normalized(), v[0], v[1], 0.3)
        }),
    ));
    let relu_graph = graph;
    cases.push((
        "sum_relu_xw_gcn",
        vec![r(6, 3), r(3, 2)],
        Box::new(move |t, v| layers::gcn_layer(t, relu_graph.normalized(), v[0], v[1], true)),
    ));
    cases
}

/// Worst finite-difference error per gradient case.
pub fn check_gradients(seed: u64) -> Vec<(&'static str, f64)> {
    gradient_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| (name, grad_check(&inputs, f.as_ref())))
        .collect()
}

/// Worst entry error of `sym_normalize` against the dense oracle over
/// `count` random graphs with up to 32 nodes, plus whether every output was
/// bitwise symmetric.
pub fn check_sym_normalize(count: usize, seed: u64) -> (f64, bool) {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut symmetric = true;
    for k in 0..count {
        let n = 1 + rng.below(32);
        let density = rng.uniform() * 0.5;
        let g = if k % 2 == 0 {
            random_graph(n, density, &mut rng)
        } else {
            random_weighted_graph(n, density, &mut rng)
        };
        let r = sparse::sym_normalize(&g);
        let dense = r.to_dense();
        let oracle = dense_sym_normalize(&g.adjacency().to_dense());
        worst = worst.max(dense.max_abs_diff(&oracle).unwrap());
        for i in 0..n {
            for j in 0..n {
                if dense.get(i, j).to_bits() != dense.get(j, i).to_bits() {
                    symmetric = false;
                }
            }
        }
    }
    (worst, symmetric)
}

/// Worst error of `matmul` against the triple loop on random 8x8 inputs.
pub fn check_matmul(count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let a = random_tensor(8, 8, &mut rng);
            let b = random_tensor(8, 8, &mut rng);
            a.matmul(&b)
                .unwrap()
                .max_abs_diff(&dense_matmul(&a, &b))
                .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst error of `spmm` against a dense product on random 6-node graphs.
pub fn check_spmm(count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let g = random_weighted_graph(6, 0.5, &mut rng);
            let x = random_tensor(6, 4, &mut rng);
            let s = g.normalized();
            s.spmm(&x)
                .unwrap()
                .max_abs_diff(&dense_matmul(&s.to_dense(), &x))
                .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst error of `ladies_probs` against the dense oracle on random 8-node
/// graphs and random row selections.
pub fn check_ladies_probs(count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let g = random_weighted_graph(8, 0.4, &mut rng);
        let mut rows: Vec<usize> = (0..8).filter(|_| rng.bernoulli(0.5)).collect();
        if rows.is_empty() {
            rows.push(rng.below(8));
        }
        let probs = sparse::ladies_probs(&g, &rows).unwrap();
        let oracle = dense_ladies_probs(&g.adjacency().to_dense(), &rows);
        for (p, o) in probs.iter().zip(&oracle) {
            worst = worst.max((p - o).abs());
        }
    }
    worst
}

/// Largest deviation of the kept edge fraction from `1 - p` over `seeds`
/// independent drops of a graph with roughly 10 000 edges.
pub fn check_drop_edge_fraction(p: f64, seeds: u64) -> f64 {
    let mut rng = Rng::new(99);
    let g = random_graph(500, 0.08, &mut rng);
    let total = g.num_edges() as f64;
    (0..seeds)
        .map(|s| {
            let mut r = Rng::new(s);
            let kept = sparse::drop_edge(&g, p, &mut r).unwrap().num_edges() as f64 / total;
            (kept - (1.0 - p)).abs()
        })
        .fold(0.0, f64::max)
}

fn column_moments(x: &T) -> Vec<(f64, f64)> {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|j| {
            let mean = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n;
            let var = (0..x.rows())
                .map(|i| (x.get(i, j) - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Worst violation of the moment invariants of PairNorm (zero column means,
/// mean squared row norm `s^2`), MeanNorm (zero column means) and BatchNorm
/// with unit scale (zero column means, unit column std) on random inputs.
pub fn check_norm_moments(count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let rows = 3 + rng.below(30);
        let cols = 1 + rng.below(8);
        let x = random_tensor(rows, cols, &mut rng);
        let s = 0.5 + 2.0 * rng.uniform();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let pair = norm::pair_norm(&mut tape, v, s).unwrap();
        let mean = norm::mean_norm(&mut tape, v).unwrap();
        let gamma = tape.constant(Tensor::ones(1, cols));
        let beta = tape.constant(Tensor::zeros(1, cols));
        let batch = norm::batch_norm(&mut tape, v, gamma, beta).unwrap();

        let p = tape.value(pair);
        let mean_sq = p.data().iter().map(|v| v * v).sum::<f64>() / rows as f64;
        worst = worst.max((mean_sq - s * s).abs());
        for (m, _) in column_moments(p)
            .into_iter()
            .chain(column_moments(tape.value(mean)))
        {
            worst = worst.max(m.abs());
        }
        for (m, sd) in column_moments(tape.value(batch)) {
            worst = worst.max(m.abs()).max((sd - 1.0).abs());
        }
    }
    worst
}
