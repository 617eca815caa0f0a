//! Skip connections and the layer combiners used by dense and jumping modes.

use crate::autodiff::{Tape, Var};
use crate::config::{Com, SkipSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(1 - alpha) x + alpha reference`.
pub fn blend<T: Scalar>(tape: &mut Tape<T>, x: Var, reference: Var, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(
            "skip_combine",
            format!("alpha {alpha} outside [0, 1]"),
        ));
    }
    let a = tape.scale(x, T::of(1.0 - alpha))?;
    let b = tape.scale(reference, T::of(alpha))?;
    tape.add(a, b)
}

/// Applies one skip connection to the output `x` of a layer. `history` holds
/// the outputs `X^0 .. X^{l-1}` of the earlier layers; `com_param` is the
/// dense combiner's learned weight, if it has one. Jumping connections leave
/// `x` alone here and act once in [`jumping_aggregate`].
pub fn skip_combine<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &SkipSpec,
    x: Var,
    history: &[Var],
    com_param: Option<Var>,
) -> Result<Var> {
    if matches!(spec, SkipSpec::None | SkipSpec::Jumping { .. }) {
        return Ok(x);
    }
    let (Some(&first), Some(&last)) = (history.first(), history.last()) else {
        return Err(Error::invalid("skip_combine", "empty history"));
    };
    match *spec {
        SkipSpec::Residual { alpha } => blend(tape, x, last, alpha),
        SkipSpec::Initial { alpha } => blend(tape, x, first, alpha),
        SkipSpec::Dense { com } => {
            let mut stack = history.to_vec();
            stack.push(x);
            com_apply(tape, com, &stack, com_param)
        }
        SkipSpec::None | SkipSpec::Jumping { .. } => unreachable!(),
    }
}

/// Combines `X^0 .. X^L` once at the end of the forward pass.
pub fn jumping_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    layers: &[Var],
    com: Com,
    param: Option<Var>,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::invalid(
            "jumping_aggregate",
            "no layers to aggregate",
        ));
    }
    com_apply(tape, com, layers, param)
}

/// Merges equally shaped embeddings.
///
/// * `Concat`: column concatenation times a learned `(k h) x h` weight.
/// * `Maxpool`: elementwise maximum.
/// * `Attention`: per-node scores `sigmoid(X^k a)` from a shared `h x 1`
///   vector `a`, divided by their sum over `k`, weighting `X^k`.
/// * `AttentionSoftmax`: as `Attention` with a softmax over the raw scores.
pub fn com_apply<T: Scalar>(
    tape: &mut Tape<T>,
    com: Com,
    stack: &[Var],
    param: Option<Var>,
) -> Result<Var> {
    let Some(&first) = stack.first() else {
        return Err(Error::invalid("com_apply", "empty stack"));
    };
    let shape = tape.value(first).shape();
    for &x in &stack[1..] {
        if tape.value(x).shape() != shape {
            return Err(Error::Shape {
                op: "com_apply",
                left: shape,
                right: tape.value(x).shape(),
            });
        }
    }
    let missing = || Error::invalid("com_apply", format!("{com:?} needs learned parameters"));
    match com {
        Com::Maxpool => {
            if stack.len() == 1 {
                return Ok(first);
            }
            tape.max_stack(stack)
        }
        Com::Concat => {
            let w = param.ok_or_else(missing)?;
            let joined = tape.concat_cols(stack)?;
            tape.matmul(joined, w)
        }
        Com::Attention | Com::AttentionSoftmax => {
            let a = param.ok_or_else(missing)?;
            let mut raw = Vec::with_capacity(stack.len());
            for &x in stack {
                raw.push(tape.matmul(x, a)?);
            }
            let weights = if com == Com::Attention {
                let mut scores = Vec::with_capacity(raw.len());
                for &r in &raw {
                    scores.push(tape.sigmoid(r)?);
                }
                let mut total = scores[0];
                for &s in &scores[1..] {
                    total = tape.add(total, s)?;
                }
                let inv = tape.recip(total)?;
                let mut weights = Vec::with_capacity(scores.len());
                for s in scores {
                    weights.push(tape.mul(s, inv)?);
                }
                weights
            } else {
                let joined = tape.concat_cols(&raw)?;
                let soft = tape.softmax_rows(joined)?;
                (0..raw.len())
                    .map(|k| tape.slice_cols(soft, k, 1))
                    .collect::<Result<Vec<_>>>()?
            };
            let mut out: Option<Var> = None;
            for (&x, w) in stack.iter().zip(weights) {
                let term = tape.mul_broadcast(x, w)?;
                out = Some(match out {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            Ok(out.expect("non-empty stack"))
        }
    }
}

/// Attention weights per node and layer (`rows x k`), for inspection.
pub fn attention_weights<T: Scalar>(
    tape: &mut Tape<T>,
    com: Com,
    stack: &[Var],
    a: Var,
) -> Result<Var> {
    let mut raw = Vec::with_capacity(stack.len());
    for &x in stack {
        raw.push(tape.matmul(x, a)?);
    }
    let joined = tape.concat_cols(&raw)?;
    match com {
        Com::AttentionSoftmax => tape.softmax_rows(joined),
        Com::Attention => {
            let scores = tape.sigmoid(joined)?;
            let means = tape.row_mean(scores)?;
            let sums = tape.scale(means, T::of_usize(stack.len()))?;
            let inv = tape.recip(sums)?;
            tape.mul_broadcast(scores, inv)
        }
        _ => Err(Error::invalid(
            "attention_weights",
            format!("{com:?} has no attention weights"),
        )),
    }
}
