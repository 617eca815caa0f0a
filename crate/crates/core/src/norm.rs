//! Graph normalizations, built from differentiable tape primitives.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn centered<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let mu = tape.col_mean(x)?;
    let neg = tape.scale(mu, -T::one())?;
    tape.add_broadcast(x, neg)
}

fn plus_eps<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let eps = tape.constant(Tensor::scalar(T::guard_eps()));
    tape.add_broadcast(x, eps)
}

/// Centers rows by the mean row, then rescales so the mean squared row norm
/// is `s^2`.
pub fn pair_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, s: f64) -> Result<Var> {
    let xc = centered(tape, x)?;
    let sq = tape.mul(xc, xc)?;
    let rows = tape.value(x).rows();
    let total = tape.sum(sq)?;
    let mean_sq = tape.scale(total, T::one() / T::of_usize(rows))?;
    let guarded = plus_eps(tape, mean_sq)?;
    let inv = tape.powf(guarded, T::of(-0.5))?;
    let factor = tape.scale(inv, T::of(s))?;
    tape.mul_broadcast(xc, factor)
}

/// Divides each row by its population std raised to `1 / p`. Rows whose
/// variance is at most the guard epsilon are left unscaled.
pub fn node_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, p: f64) -> Result<Var> {
    let std = tape.row_std(x)?;
    // row_std is sqrt(var + eps), so var <= eps exactly when std <= sqrt(2 eps)
    let floor = (T::guard_eps() + T::guard_eps()).sqrt();
    let std = tape.unit_below(std, floor)?;
    let divisor = tape.powf(std, T::of(-1.0 / p))?;
    tape.mul_broadcast(x, divisor)
}

/// Subtracts the column means.
pub fn mean_norm<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    centered(tape, x)
}

/// Standardizes each column with statistics of the whole input, then
/// applies the `1 x cols` affine `gamma`, `beta`.
pub fn batch_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let cols = tape.value(x).cols();
    for p in [gamma, beta] {
        let shape = tape.value(p).shape();
        if shape != (1, cols) {
            return Err(Error::Shape {
                op: "batch_norm",
                left: tape.value(x).shape(),
                right: shape,
            });
        }
    }
    let xc = centered(tape, x)?;
    let std = tape.col_std(x)?;
    let inv = tape.recip(std)?;
    let standardized = tape.mul_broadcast(xc, inv)?;
    let scaled = tape.mul_broadcast(standardized, gamma)?;
    tape.add_broadcast(scaled, beta)
}

/// Learnable pieces of one group normalization.
#[derive(Debug, Clone)]
pub struct GroupNormVars {
    /// `cols x groups` soft-assignment map.
    pub assign: Var,
    pub gamma: Vec<Var>,
    pub beta: Vec<Var>,
}

/// `X + lambda * sum_g BN_g(softmax(X U)[:, g] * X)`.
pub fn group_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &GroupNormVars,
    lambda: f64,
) -> Result<Var> {
    let (_, cols) = tape.value(x).shape();
    let (u_rows, groups) = tape.value(vars.assign).shape();
    if u_rows != cols || vars.gamma.len() != groups || vars.beta.len() != groups {
        return Err(Error::Shape {
            op: "group_norm",
            left: tape.value(x).shape(),
            right: (u_rows, groups),
        });
    }
    if lambda == 0.0 {
        return Ok(x);
    }
    let logits = tape.matmul(x, vars.assign)?;
    let scores = tape.softmax_rows(logits)?;
    let mut acc: Option<Var> = None;
    for g in 0..groups {
        let weight = tape.slice_cols(scores, g, 1)?;
        let member = tape.mul_broadcast(x, weight)?;
        let normed = batch_norm(tape, member, vars.gamma[g], vars.beta[g])?;
        acc = Some(match acc {
            Some(a) => tape.add(a, normed)?,
            None => normed,
        });
    }
    let total = acc.expect("at least one group");
    let scaled = tape.scale(total, T::of(lambda))?;
    tape.add(x, scaled)
}

/// Group normalization followed by node normalization.
pub fn comb_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &GroupNormVars,
    lambda: f64,
    p: f64,
) -> Result<Var> {
    let grouped = group_norm(tape, x, vars, lambda)?;
    node_norm(tape, grouped, p)
}
