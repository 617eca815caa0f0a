//! Backbone layers and the over-smoothing diagnostic.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::sparse::NormalizedAdjacency;
use crate::tensor::Tensor;

/// Maximum number of row pairs [`smoothness`] averages over.
pub const SMOOTHNESS_PAIRS: usize = 1000;

/// One vanilla graph convolution `R(A) X W`, optionally followed by relu.
pub fn gcn_layer<T: Scalar>(
    tape: &mut Tape<T>,
    rhat: &NormalizedAdjacency<T>,
    x: Var,
    w: Var,
    activate: bool,
) -> Result<Var> {
    let propagated = tape.spmm(rhat.matrix(), x)?;
    let out = tape.matmul(propagated, w)?;
    if activate {
        tape.relu(out)
    } else {
        Ok(out)
    }
}

/// `R(A)^k X` by `k` successive sparse products.
pub fn sgc_precompute<T: Scalar>(
    rhat: &NormalizedAdjacency<T>,
    x: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>> {
    let mut out = x.clone();
    for _ in 0..k {
        out = rhat.spmm(&out)?;
    }
    Ok(out)
}

/// `beta_l = ln(lambda / l + 1)` for 1-based layer index `l`.
pub fn identity_beta(lambda: f64, layer: usize) -> f64 {
    assert!(layer >= 1, "layer indices start at 1");
    (lambda / layer as f64).ln_1p()
}

/// `P (beta W + (1 - beta) I)` for an already propagated `P = R(A) X`.
pub(crate) fn identity_mix<T: Scalar>(
    tape: &mut Tape<T>,
    propagated: Var,
    w: Var,
    beta: f64,
) -> Result<Var> {
    let (r, c) = tape.value(w).shape();
    if r != c {
        return Err(Error::Shape {
            op: "identity_mapping_layer",
            left: (r, c),
            right: (c, r),
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(
            "identity_mapping_layer",
            format!("beta {beta} outside [0, 1]"),
        ));
    }
    let transformed = tape.matmul(propagated, w)?;
    if beta == 1.0 {
        return Ok(transformed);
    }
    let weighted = tape.scale(transformed, T::of(beta))?;
    let kept = tape.scale(propagated, T::of(1.0 - beta))?;
    tape.add(weighted, kept)
}

/// `relu(R(A) X (beta W + (1 - beta) I))`.
pub fn identity_mapping_layer<T: Scalar>(
    tape: &mut Tape<T>,
    rhat: &NormalizedAdjacency<T>,
    x: Var,
    w: Var,
    beta: f64,
) -> Result<Var> {
    let propagated = tape.spmm(rhat.matrix(), x)?;
    let mixed = identity_mix(tape, propagated, w, beta)?;
    tape.relu(mixed)
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean pairwise cosine similarity between rows. Uses every pair when there
/// are at most [`SMOOTHNESS_PAIRS`] of them, otherwise that many pairs drawn
/// from a seeded stream. Zero rows contribute 0.
pub fn smoothness<T: Scalar>(x: &Tensor<T>, seed: u64) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid("smoothness", "need at least 2 rows"));
    }
    let total_pairs = n * (n - 1) / 2;
    let mut sum = 0.0;
    if total_pairs <= SMOOTHNESS_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                sum += cosine(x.row(i), x.row(j));
            }
        }
        return Ok(sum / total_pairs as f64);
    }
    let mut rng = Rng::substream(seed, Stream::Smoothness, &[]);
    for _ in 0..SMOOTHNESS_PAIRS {
        let i = rng.below(n);
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        sum += cosine(x.row(i), x.row(j));
    }
    Ok(sum / SMOOTHNESS_PAIRS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrGraph;

    #[test]
    fn beta_schedule() {
        assert!((identity_beta(0.1, 16) - 0.006_230_6).abs() < 1e-7);
        assert!(identity_beta(0.5, 2) < identity_beta(0.5, 1));
    }

    #[test]
    fn empty_graph_identity_weight_is_relu() {
        let g = CsrGraph::<f64>::empty(2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[-1.0, 2.0], &[3.0, -4.0]]).unwrap());
        let w = tape.constant(Tensor::identity(2));
        let y = gcn_layer(&mut tape, g.normalized(), x, w, true).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn beta_one_matches_gcn_bitwise() {
        let g = CsrGraph::<f64>::from_edges(3, &[(0, 1), (1, 2)], true).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(3, 2, |i, j| (i as f64 - j as f64) * 0.7));
        let w = tape.constant(Tensor::from_rows(&[&[0.3, -1.1], &[0.9, 0.2]]).unwrap());
        let a = gcn_layer(&mut tape, g.normalized(), x, w, true).unwrap();
        let b = identity_mapping_layer(&mut tape, g.normalized(), x, w, 1.0).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn beta_zero_is_propagation_only() {
        let g = CsrGraph::<f64>::from_edges(3, &[(0, 1), (1, 2)], true).unwrap();
        let xv = Tensor::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.5);
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let w = tape.constant(Tensor::from_fn(2, 2, |i, j| (i * 3 + j) as f64));
        let y = identity_mapping_layer(&mut tape, g.normalized(), x, w, 0.0).unwrap();
        let expect = g.normalized().spmm(&xv).unwrap().map(|v| v.max(0.0));
        assert!(tape.value(y).max_abs_diff(&expect).unwrap() < 1e-15);
        let bad = tape.constant(Tensor::zeros(2, 3));
        assert!(identity_mapping_layer(&mut tape, g.normalized(), x, bad, 0.5).is_err());
    }

    #[test]
    fn smoothness_anchors() {
        let same = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]).unwrap();
        assert!((smoothness(&same, 0).unwrap() - 1.0).abs() < 1e-12);
        let ortho = Tensor::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 3.0]]).unwrap();
        assert_eq!(smoothness(&ortho, 0).unwrap(), 0.0);
        let opposite = Tensor::<f64>::from_rows(&[&[1.0, -2.0], &[-1.0, 2.0]]).unwrap();
        assert!((smoothness(&opposite, 0).unwrap() + 1.0).abs() < 1e-12);
        let zero = Tensor::<f64>::from_rows(&[&[0.0, 0.0], &[1.0, 1.0]]).unwrap();
        assert_eq!(smoothness(&zero, 0).unwrap(), 0.0);
        assert!(smoothness(&Tensor::<f64>::ones(1, 3), 0).is_err());
    }

    #[test]
    fn sgc_zero_steps_is_identity() {
        let g = CsrGraph::<f64>::from_edges(3, &[(0, 1)], true).unwrap();
        let x = Tensor::from_fn(3, 2, |i, j| (i * j) as f64);
        assert_eq!(sgc_precompute(g.normalized(), &x, 0).unwrap(), x);
    }
}
