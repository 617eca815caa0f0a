//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value and its
//! parents; [`Var`] is a copyable handle to a node. `backward` walks the
//! nodes in exact reverse recording order, so parents always precede the
//! nodes that consume them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{gemm, Layout, Scalar};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBroadcast(usize, usize),
    MulBroadcast(usize, usize),
    Scale(usize, T),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Powf(usize, T),
    Recip(usize),
    ReplaceBelow(usize, T),
    Dropout(usize, Vec<bool>, T),
    MatMul(usize, usize),
    Spmm(Arc<CsrMatrix<T>>, usize),
    Transpose(usize),
    RowMean(usize),
    RowStd(usize),
    RowMax(usize, Vec<usize>),
    Sum(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    MaxStack(Vec<usize>, Vec<u32>),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    SelectRows(usize, Arc<[usize]>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Single-owner recording of one forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of a scalar loss, one slot per `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for values that do not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.slots.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.slots.get_mut(v.id).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node; previously issued vars become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v).expect("variable belongs to this tape")].requires_grad
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var { tape: self.id, id }
    }

    fn derived(&mut self, value: Tensor<T>, parents: &[usize], op: Op<T>) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.push(value, requires_grad, op)
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(T) -> T,
        op: impl FnOnce(usize) -> Op<T>,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f);
        Ok(self.derived(value, &[ia], op(ia)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia]
            .value
            .zip_map(&self.nodes[ib].value, "add", |x, y| x + y)?;
        Ok(self.derived(value, &[ia, ib], Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia]
            .value
            .zip_map(&self.nodes[ib].value, "sub", |x, y| x - y)?;
        Ok(self.derived(value, &[ia, ib], Op::Sub(ia, ib)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia]
            .value
            .zip_map(&self.nodes[ib].value, "mul", |x, y| x * y)?;
        Ok(self.derived(value, &[ia, ib], Op::Mul(ia, ib)))
    }

    /// `a + b` where `b` is `1x1`, `1 x cols`, `rows x 1` or the same shape as `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = broadcast_apply(
            &self.nodes[ia].value,
            &self.nodes[ib].value,
            "add_broadcast",
            |x, y| x + y,
        )?;
        Ok(self.derived(value, &[ia, ib], Op::AddBroadcast(ia, ib)))
    }

    /// `a * b` (elementwise) with the broadcasting rules of [`Tape::add_broadcast`].
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = broadcast_apply(
            &self.nodes[ia].value,
            &self.nodes[ib].value,
            "mul_broadcast",
            |x, y| x * y,
        )?;
        Ok(self.derived(value, &[ia, ib], Op::MulBroadcast(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(a, |x| x * s, |ia| Op::Scale(ia, s))
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, T::exp, Op::Exp)
    }

    /// Natural log; every entry must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if let Some(x) = self.nodes[ia]
            .value
            .data()
            .iter()
            .find(|&&x| !(x > T::zero()))
        {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive entry {x}"),
            });
        }
        self.unary(a, T::ln, Op::Log)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid)
    }

    /// `x^p` for positive entries.
    pub fn powf(&mut self, a: Var, p: T) -> Result<Var> {
        let ia = self.idx(a)?;
        if let Some(x) = self.nodes[ia]
            .value
            .data()
            .iter()
            .find(|&&x| !(x > T::zero()))
        {
            return Err(Error::Domain {
                op: "powf",
                detail: format!("non-positive base {x}"),
            });
        }
        self.unary(a, |x| x.powf(p), |ia| Op::Powf(ia, p))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if self.nodes[ia].value.data().iter().any(|x| x.is_zero()) {
            return Err(Error::Domain {
                op: "recip",
                detail: "zero entry".into(),
            });
        }
        self.unary(a, T::recip, Op::Recip)
    }

    /// Entries `<= threshold` become 1 and stop the gradient; others pass through.
    pub fn unit_below(&mut self, a: Var, threshold: T) -> Result<Var> {
        self.unary(
            a,
            |x| if x > threshold { x } else { T::one() },
            |ia| Op::ReplaceBelow(ia, threshold),
        )
    }

    /// Inverted dropout: zero each entry with probability `rate` and scale
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "dropout",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        let ia = self.idx(a)?;
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let scale = T::of(1.0 / keep);
        let src = &self.nodes[ia].value;
        let mask: Vec<bool> = (0..src.data().len()).map(|_| rng.bernoulli(keep)).collect();
        let data = src
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| if m { x * scale } else { T::zero() })
            .collect();
        let value = Tensor::new(src.rows(), src.cols(), data)?;
        Ok(self.derived(value, &[ia], Op::Dropout(ia, mask, scale)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.derived(value, &[ia, ib], Op::MatMul(ia, ib)))
    }

    /// `s * x` for a constant sparse `s`.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix<T>>, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let value = s.spmm(&self.nodes[ix].value)?;
        Ok(self.derived(value, &[ix], Op::Spmm(Arc::clone(s), ix)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.transpose();
        Ok(self.derived(value, &[ia], Op::Transpose(ia)))
    }

    /// Per-row mean, `rows x 1`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let d = T::of_usize(x.cols());
        let value = Tensor::from_fn(x.rows(), 1, |i, _| x.row(i).iter().copied().sum::<T>() / d);
        Ok(self.derived(value, &[ia], Op::RowMean(ia)))
    }

    /// Per-row population standard deviation `sqrt(var + eps)`, `rows x 1`.
    pub fn row_std(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let value = Tensor::from_fn(x.rows(), 1, |i, _| row_std(x.row(i)));
        Ok(self.derived(value, &[ia], Op::RowStd(ia)))
    }

    /// Per-row maximum, `rows x 1`; ties route the gradient to the first max.
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let arg = x.argmax_rows();
        let value = Tensor::from_fn(x.rows(), 1, |i, _| x.get(i, arg[i]));
        Ok(self.derived(value, &[ia], Op::RowMax(ia, arg)))
    }

    /// Per-column mean, `1 x cols`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.transpose(a)?;
        let m = self.row_mean(t)?;
        self.transpose(m)
    }

    /// Per-column population standard deviation, `1 x cols`.
    pub fn col_std(&mut self, a: Var) -> Result<Var> {
        let t = self.transpose(a)?;
        let s = self.row_std(t)?;
        self.transpose(s)
    }

    /// Sum of all entries, `1x1`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = Tensor::scalar(self.nodes[ia].value.sum());
        Ok(self.derived(value, &[ia], Op::Sum(ia)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let count = self.nodes[ia].value.data().len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::of_usize(count))
    }

    /// Column-wise concatenation of equal-height tensors.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols", "nothing to concatenate"));
        }
        let ids = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.nodes[ids[0]].value.rows();
        for &p in &ids[1..] {
            if self.nodes[p].value.rows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    &self.nodes[ids[0]].value,
                    &self.nodes[p].value,
                ));
            }
        }
        let total: usize = ids.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in &ids {
                data.extend_from_slice(self.nodes[p].value.row(i));
            }
        }
        let value = Tensor::new(rows, total, data)?;
        Ok(self.derived(value, &ids, Op::ConcatCols(ids.clone())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if len == 0 || start + len > x.cols() {
            return Err(Error::invalid(
                "slice_cols",
                format!("columns {start}..{} of {}", start + len, x.cols()),
            ));
        }
        let value = Tensor::from_fn(x.rows(), len, |i, j| x.get(i, start + j));
        Ok(self.derived(value, &[ia], Op::SliceCols(ia, start)))
    }

    /// Elementwise maximum across equally shaped tensors; ties go to the
    /// earliest tensor.
    pub fn max_stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("max_stack", "empty stack"));
        }
        let ids = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let first = &self.nodes[ids[0]].value;
        for &p in &ids[1..] {
            first.expect_same_shape(&self.nodes[p].value, "max_stack")?;
        }
        let mut data = first.data().to_vec();
        let mut arg = vec![0u32; data.len()];
        for (k, &p) in ids.iter().enumerate().skip(1) {
            for (e, &v) in self.nodes[p].value.data().iter().enumerate() {
                if v > data[e] {
                    data[e] = v;
                    arg[e] = k as u32;
                }
            }
        }
        let value = Tensor::new(first.rows(), first.cols(), data)?;
        Ok(self.derived(value, &ids, Op::MaxStack(ids.clone(), arg)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let mut value = x.clone();
        for i in 0..x.rows() {
            let row = value.row_mut(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        Ok(self.derived(value, &[ia], Op::SoftmaxRows(ia)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let mut value = x.clone();
        for i in 0..x.rows() {
            let row = value.row_mut(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.derived(value, &[ia], Op::LogSoftmaxRows(ia)))
    }

    pub fn select_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.select_rows(&idx)?;
        Ok(self.derived(value, &[ia], Op::SelectRows(ia, idx)))
    }

    /// Gradients of the `1x1` `loss` with respect to every `requires_grad` leaf.
    /// The tape can be differentiated once; call [`Tape::reset`] to reuse it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (rows, cols) = self.nodes[il].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[il].requires_grad {
            grads[il] = Some(Tensor::scalar(T::one()));
        }
        for k in (0..=il).rev() {
            let node = &self.nodes[k];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            self.propagate(k, &g, &mut grads);
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[k].is_none() {
                let (r, c) = node.value.shape();
                grads[k] = Some(Tensor::zeros(r, c));
            }
        }
        Ok(Gradients {
            tape: self.id,
            slots: grads,
        })
    }

    fn propagate(&self, k: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[k];
        let y = &node.value;
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, self, *a, || g.clone());
                accumulate(grads, self, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, self, *a, || g.clone());
                accumulate(grads, self, *b, || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, self, *a, || zip(g, val(*b), |g, b| g * b));
                accumulate(grads, self, *b, || zip(g, val(*a), |g, a| g * a));
            }
            Op::AddBroadcast(a, b) => {
                accumulate(grads, self, *a, || g.clone());
                accumulate(grads, self, *b, || reduce_to(g, val(*b).shape()));
            }
            Op::MulBroadcast(a, b) => {
                if wants(*a) {
                    let ga = broadcast_apply(g, val(*b), "mul_broadcast", |g, b| g * b)
                        .expect("shapes checked");
                    accumulate(grads, self, *a, || ga);
                }
                accumulate(grads, self, *b, || {
                    reduce_to(&zip(g, val(*a), |g, a| g * a), val(*b).shape())
                });
            }
            Op::Scale(a, s) => accumulate(grads, self, *a, || g.map(|x| x * *s)),
            Op::Relu(a) => accumulate(grads, self, *a, || {
                zip(g, val(*a), |g, x| if x > T::zero() { g } else { T::zero() })
            }),
            Op::Exp(a) => accumulate(grads, self, *a, || zip(g, y, |g, y| g * y)),
            Op::Log(a) => accumulate(grads, self, *a, || zip(g, val(*a), |g, x| g / x)),
            Op::Sigmoid(a) => {
                accumulate(grads, self, *a, || zip(g, y, |g, y| g * y * (T::one() - y)))
            }
            Op::Powf(a, p) => accumulate(grads, self, *a, || {
                zip(g, val(*a), |g, x| g * *p * x.powf(*p - T::one()))
            }),
            Op::Recip(a) => accumulate(grads, self, *a, || zip(g, y, |g, y| -g * y * y)),
            Op::ReplaceBelow(a, thr) => accumulate(grads, self, *a, || {
                zip(g, val(*a), |g, x| if x > *thr { g } else { T::zero() })
            }),
            Op::Dropout(a, mask, scale) => accumulate(grads, self, *a, || {
                let data = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g * *scale } else { T::zero() })
                    .collect();
                Tensor::new(g.rows(), g.cols(), data).expect("shape preserved")
            }),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, kk, n) = (va.rows(), va.cols(), vb.cols());
                if wants(*a) {
                    let slot = slot(grads, *a, va.shape());
                    gemm(
                        m,
                        n,
                        kk,
                        g.data(),
                        Layout::AsIs,
                        vb.data(),
                        Layout::Transposed,
                        slot.data_mut(),
                        true,
                    );
                }
                if wants(*b) {
                    let slot = slot(grads, *b, vb.shape());
                    gemm(
                        kk,
                        m,
                        n,
                        va.data(),
                        Layout::Transposed,
                        g.data(),
                        Layout::AsIs,
                        slot.data_mut(),
                        true,
                    );
                }
            }
            Op::Spmm(s, x) => {
                if wants(*x) {
                    let slot = slot(grads, *x, val(*x).shape());
                    s.spmm_transposed_into(g, slot);
                }
            }
            Op::Transpose(a) => accumulate(grads, self, *a, || g.transpose()),
            Op::RowMean(a) => accumulate(grads, self, *a, || {
                let x = val(*a);
                let d = T::of_usize(x.cols());
                Tensor::from_fn(x.rows(), x.cols(), |i, _| g.get(i, 0) / d)
            }),
            Op::RowStd(a) => accumulate(grads, self, *a, || {
                let x = val(*a);
                let d = T::of_usize(x.cols());
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let row = x.row(i);
                    let mean = row.iter().copied().sum::<T>() / d;
                    let coef = g.get(i, 0) / (d * y.get(i, 0));
                    for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
                        *o = coef * (v - mean);
                    }
                }
                out
            }),
            Op::RowMax(a, arg) => accumulate(grads, self, *a, || {
                let x = val(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for (i, &j) in arg.iter().enumerate() {
                    out.set(i, j, g.get(i, 0));
                }
                out
            }),
            Op::Sum(a) => accumulate(grads, self, *a, || {
                let (r, c) = val(*a).shape();
                Tensor::filled(r, c, g.get(0, 0))
            }),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    accumulate(grads, self, p, || {
                        Tensor::from_fn(r, c, |i, j| g.get(i, offset + j))
                    });
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                if wants(*a) {
                    let slot = slot(grads, *a, val(*a).shape());
                    for i in 0..g.rows() {
                        for (j, &v) in g.row(i).iter().enumerate() {
                            let cur = slot.get(i, start + j);
                            slot.set(i, start + j, cur + v);
                        }
                    }
                }
            }
            Op::MaxStack(parts, arg) => {
                for (k, &p) in parts.iter().enumerate() {
                    accumulate(grads, self, p, || {
                        let data = g
                            .data()
                            .iter()
                            .zip(arg)
                            .map(|(&g, &w)| if w as usize == k { g } else { T::zero() })
                            .collect();
                        Tensor::new(g.rows(), g.cols(), data).expect("shape preserved")
                    });
                }
            }
            Op::SoftmaxRows(a) => accumulate(grads, self, *a, || {
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: T = g.row(i).iter().zip(y.row(i)).map(|(&g, &y)| g * y).sum();
                    for ((o, &gv), &yv) in out.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = yv * (gv - dot);
                    }
                }
                out
            }),
            Op::LogSoftmaxRows(a) => accumulate(grads, self, *a, || {
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let total: T = g.row(i).iter().copied().sum();
                    for ((o, &gv), &yv) in out.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = gv - yv.exp() * total;
                    }
                }
                out
            }),
            Op::SelectRows(a, idx) => {
                if wants(*a) {
                    let slot = slot(grads, *a, val(*a).shape());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &v) in slot.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

fn row_std<T: Scalar>(row: &[T]) -> T {
    let d = T::of_usize(row.len());
    let mean = row.iter().copied().sum::<T>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
    (var + T::guard_eps()).sqrt()
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    a.zip_map(b, "backward", f)
        .expect("backward operands share a shape")
}

/// Gradient slot for node `i`, zero-initialized on first touch.
fn slot<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    i: usize,
    shape: (usize, usize),
) -> &mut Tensor<T> {
    grads[i].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    tape: &Tape<T>,
    i: usize,
    contribution: impl FnOnce() -> Tensor<T>,
) {
    if !tape.nodes[i].requires_grad {
        return;
    }
    let c = contribution();
    match &mut grads[i] {
        Some(existing) => {
            for (e, &v) in existing.data_mut().iter_mut().zip(c.data()) {
                *e += v;
            }
        }
        empty => *empty = Some(c),
    }
}

fn broadcast_apply<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let (r, c) = a.shape();
    let pick: fn(&Tensor<T>, usize, usize) -> T = match b.shape() {
        s if s == (r, c) => |b, i, j| b.get(i, j),
        (1, 1) => |b, _, _| b.get(0, 0),
        (1, bc) if bc == c => |b, _, j| b.get(0, j),
        (br, 1) if br == r => |b, i, _| b.get(i, 0),
        _ => return Err(shape_err(op, a, b)),
    };
    Ok(Tensor::from_fn(r, c, |i, j| f(a.get(i, j), pick(b, i, j))))
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: (usize, usize)) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        for (j, &v) in g.row(i).iter().enumerate() {
            let (oi, oj) = (
                if shape.0 == 1 { 0 } else { i },
                if shape.1 == 1 { 0 } else { j },
            );
            let cur = out.get(oi, oj);
            out.set(oi, oj, cur + v);
        }
    }
    out
}
