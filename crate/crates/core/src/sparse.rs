//! Compressed-sparse-row adjacency, the normalized propagation operator
//! `(I + D)^-1/2 (I + A) (I + D)^-1/2`, sparse-dense products, and the
//! stochastic sparsifiers behind DropEdge, DropNode and LADIES.

use std::cmp::Ordering;
use std::ops::Deref;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// General `rows x cols` CSR matrix with strictly increasing column indices
/// inside each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds from unordered `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, T)>,
    ) -> Result<Self> {
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(Error::invalid(
                "CsrMatrix::from_triplets",
                format!("entry ({i}, {j}) outside {rows}x{cols}"),
            ));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<T> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::from_parts(rows, cols, row_ptr, col_idx, values)
    }

    /// Keeps the nonzero entries of a dense tensor.
    pub fn from_dense(x: &Tensor<T>) -> Self {
        let mut row_ptr = Vec::with_capacity(x.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                if v != T::zero() {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: x.rows(),
            cols: x.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(self.rows.max(1), self.cols.max(1));
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(T::zero(), |k| vals[k])
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).1.iter().copied().sum())
            .collect()
    }

    /// `self * x`.
    pub fn spmm(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != x.rows() {
            return Err(Error::Shape {
                op: "spmm",
                left: (self.rows, self.cols),
                right: x.shape(),
            });
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let dst = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for (o, &xv) in dst.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `out += self^T * g`, without materializing the transpose.
    pub(crate) fn spmm_transposed_into(&self, g: &Tensor<T>, out: &mut Tensor<T>) {
        debug_assert_eq!(g.rows(), self.rows);
        debug_assert_eq!(out.rows(), self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let src = g.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for (o, &gv) in out.row_mut(j).iter_mut().zip(src) {
                    *o += v * gv;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("CsrMatrix", detail));
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return bad(format!(
                "row_ptr must have {} entries starting at 0",
                self.rows + 1
            ));
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len()
            || self.col_idx.len() != self.values.len()
        {
            return bad("row_ptr, col_idx and values disagree on nnz".into());
        }
        for i in 0..self.rows {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return bad(format!("row_ptr decreases at row {i}"));
            }
            let (cols, _) = self.row(i);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!(
                    "row {i} column indices are not strictly increasing"
                ));
            }
            if cols.last().is_some_and(|&j| j >= self.cols) {
                return bad(format!("row {i} has a column index beyond {}", self.cols));
            }
        }
        Ok(())
    }
}

/// Square adjacency `A` without stored self-loops.
#[derive(Debug, Clone)]
pub struct CsrGraph<T> {
    adj: CsrMatrix<T>,
    undirected: bool,
    normalized: OnceLock<NormalizedAdjacency<T>>,
}

impl<T: Scalar> PartialEq for CsrGraph<T> {
    fn eq(&self, other: &Self) -> bool {
        self.adj == other.adj && self.undirected == other.undirected
    }
}

impl<T: Scalar> CsrGraph<T> {
    /// Validates the CSR invariants: square, sorted rows, no self-loops,
    /// weights in `(0, 1]`, and symmetry when `undirected`.
    pub fn new(adj: CsrMatrix<T>, undirected: bool) -> Result<Self> {
        if adj.rows != adj.cols {
            return Err(Error::invalid(
                "CsrGraph::new",
                format!("adjacency must be square, got {}x{}", adj.rows, adj.cols),
            ));
        }
        for i in 0..adj.rows {
            let (cols, vals) = adj.row(i);
            if cols.binary_search(&i).is_ok() {
                return Err(Error::invalid(
                    "CsrGraph::new",
                    format!("stored self-loop at node {i}"),
                ));
            }
            if let Some(v) = vals.iter().find(|&&v| !(v > T::zero() && v <= T::one())) {
                return Err(Error::invalid(
                    "CsrGraph::new",
                    format!("edge weight {v} in row {i} outside (0, 1]"),
                ));
            }
            if undirected {
                for (&j, &v) in cols.iter().zip(vals) {
                    if adj.get(j, i) != v {
                        return Err(Error::invalid(
                            "CsrGraph::new",
                            format!("edge ({i}, {j}) has no equal-weight reverse"),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            adj,
            undirected,
            normalized: OnceLock::new(),
        })
    }

    /// Unit-weight graph from an edge list. Self-loops are dropped, duplicates
    /// merged, and with `undirected` every edge is mirrored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], undirected: bool) -> Result<Self> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(
                    "CsrGraph::from_edges",
                    format!("edge ({i}, {j}) outside {n} nodes"),
                ));
            }
            if i == j {
                continue;
            }
            entries.push((i, j));
            if undirected {
                entries.push((j, i));
            }
        }
        entries.sort_unstable();
        entries.dedup();
        let triplets = entries.into_iter().map(|(i, j)| (i, j, T::one())).collect();
        Self::new(CsrMatrix::from_triplets(n, n, triplets)?, undirected)
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adj: CsrMatrix {
                rows: n,
                cols: n,
                row_ptr: vec![0; n + 1],
                col_idx: Vec::new(),
                values: Vec::new(),
            },
            undirected: true,
            normalized: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.adj.rows
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn adjacency(&self) -> &CsrMatrix<T> {
        &self.adj
    }

    /// Stored directed entries.
    pub fn nnz(&self) -> usize {
        self.adj.nnz()
    }

    /// Undirected edges count once.
    pub fn num_edges(&self) -> usize {
        if self.undirected {
            self.adj.nnz() / 2
        } else {
            self.adj.nnz()
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adj.row(i).0
    }

    /// Each undirected edge once as `(i, j)` with `i < j`; every entry for
    /// directed graphs.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.n() {
            for &j in self.neighbors(i) {
                if !self.undirected || i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `R(A)`, computed on first use and cached.
    pub fn normalized(&self) -> &NormalizedAdjacency<T> {
        self.normalized.get_or_init(|| sym_normalize(self))
    }

    /// `diag(row_keep) A diag(col_keep)`; masked-out rows/columns lose their
    /// entries. The result is directed unless both masks are absent.
    pub fn mask(&self, row_keep: Option<&[bool]>, col_keep: Option<&[bool]>) -> Self {
        let n = self.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        row_ptr.push(0);
        for i in 0..n {
            if row_keep.is_none_or(|r| r[i]) {
                let (cols, vals) = self.adj.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    if col_keep.is_none_or(|c| c[j]) {
                        col_idx.push(j);
                        values.push(v);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            adj: CsrMatrix {
                rows: n,
                cols: n,
                row_ptr,
                col_idx,
                values,
            },
            undirected: self.undirected && row_keep.is_none() && col_keep.is_none(),
            normalized: OnceLock::new(),
        }
    }
}

/// The propagation operator `R(A)`, diagonal included. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T>(Arc<CsrMatrix<T>>);

impl<T> NormalizedAdjacency<T> {
    pub fn matrix(&self) -> &Arc<CsrMatrix<T>> {
        &self.0
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl<T> Deref for NormalizedAdjacency<T> {
    type Target = CsrMatrix<T>;

    fn deref(&self) -> &CsrMatrix<T> {
        &self.0
    }
}

/// `R(A) = (I + D)^-1/2 (I + A) (I + D)^-1/2` with `D` the weighted row sums
/// of `A`. Isolated nodes get a unit diagonal.
pub fn sym_normalize<T: Scalar>(a: &CsrGraph<T>) -> NormalizedAdjacency<T> {
    let n = a.n();
    let inv_sqrt: Vec<T> = a
        .adj
        .row_sums()
        .into_iter()
        .map(|d| (T::one() + d).sqrt().recip())
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let (cols, vals) = a.adj.row(i);
        let mut diag_done = false;
        for (&j, &v) in cols.iter().zip(vals) {
            if !diag_done && j > i {
                col_idx.push(i);
                values.push(inv_sqrt[i] * inv_sqrt[i]);
                diag_done = true;
            }
            col_idx.push(j);
            // The product of the two scalings is commutative, so R[i][j] and
            // R[j][i] are bit-identical for symmetric input.
            values.push(v * (inv_sqrt[i] * inv_sqrt[j]));
        }
        if !diag_done {
            col_idx.push(i);
            values.push(inv_sqrt[i] * inv_sqrt[i]);
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency(Arc::new(CsrMatrix {
        rows: n,
        cols: n,
        row_ptr,
        col_idx,
        values,
    }))
}

fn check_probability(op: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(
            op,
            format!("drop probability {p} outside [0, 1]"),
        ));
    }
    Ok(())
}

/// Keeps each edge with probability `1 - p`. Undirected edges are sampled
/// once and kept or dropped in both directions. The result is not
/// re-normalized.
pub fn drop_edge<T: Scalar>(a: &CsrGraph<T>, p: f64, rng: &mut Rng) -> Result<CsrGraph<T>> {
    check_probability("drop_edge", p)?;
    let keep_p = 1.0 - p;
    let n = a.n();
    let mut keep = vec![false; a.nnz()];
    for i in 0..n {
        let start = a.adj.row_ptr[i];
        for (k, &j) in a.neighbors(i).iter().enumerate() {
            if !a.undirected || i < j {
                keep[start + k] = rng.bernoulli(keep_p);
            }
        }
    }
    if a.undirected {
        // Mirror the decision of (i, j), i < j, onto (j, i).
        for i in 0..n {
            let start = a.adj.row_ptr[i];
            for (k, &j) in a.neighbors(i).iter().enumerate() {
                if j < i {
                    let (cols_j, _) = a.adj.row(j);
                    let pos = cols_j
                        .binary_search(&i)
                        .expect("undirected graph is symmetric");
                    keep[start + k] = keep[a.adj.row_ptr[j] + pos];
                }
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let range = a.adj.row_ptr[i]..a.adj.row_ptr[i + 1];
        for ((&kept, &j), &v) in keep[range.clone()]
            .iter()
            .zip(&a.adj.col_idx[range.clone()])
            .zip(&a.adj.values[range])
        {
            if kept {
                col_idx.push(j);
                values.push(v);
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrGraph {
        adj: CsrMatrix {
            rows: n,
            cols: n,
            row_ptr,
            col_idx,
            values,
        },
        undirected: a.undirected,
        normalized: OnceLock::new(),
    })
}

/// Node mask with each entry kept (`true`) with probability `1 - p`.
pub fn drop_node_mask(n: usize, p: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    check_probability("drop_node_mask", p)?;
    let keep_p = 1.0 - p;
    Ok((0..n).map(|_| rng.bernoulli(keep_p)).collect())
}

/// LADIES column distribution `p_j = ||Q A[:, j]||^2 / ||Q A||_F^2` where `Q`
/// selects `selected_rows`. All zeros when the selected rows carry no mass.
pub fn ladies_probs<T: Scalar>(a: &CsrGraph<T>, selected_rows: &[usize]) -> Result<Vec<T>> {
    if selected_rows.is_empty() {
        return Err(Error::invalid("ladies_probs", "empty row selection"));
    }
    let n = a.n();
    let mut mass = vec![T::zero(); n];
    for &i in selected_rows {
        if i >= n {
            return Err(Error::invalid(
                "ladies_probs",
                format!("row {i} outside {n} nodes"),
            ));
        }
        let (cols, vals) = a.adj.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            mass[j] += v * v;
        }
    }
    let total: T = mass.iter().copied().sum();
    if total > T::zero() {
        for m in &mut mass {
            *m = *m / total;
        }
    }
    Ok(mass)
}

/// Draws `min(s, support)` distinct indices with probability proportional to
/// `probs`, returned in ascending order.
///
/// Uses exponential keys `ln(u) / p_j` and keeps the `s` largest, which has
/// the same distribution as drawing one index at a time proportional to the
/// remaining mass.
pub fn ladies_sample<T: Scalar>(probs: &[T], s: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if s == 0 {
        return Err(Error::invalid(
            "ladies_sample",
            "sample size must be at least 1",
        ));
    }
    let support: Vec<usize> = (0..probs.len()).filter(|&j| probs[j] > T::zero()).collect();
    if s >= support.len() {
        return Ok(support);
    }
    let mut keyed: Vec<(f64, usize)> = support
        .into_iter()
        .map(|j| {
            let u = 1.0 - rng.uniform();
            (u.ln() / probs[j].as_f64(), j)
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let mut chosen: Vec<usize> = keyed.into_iter().take(s).map(|(_, j)| j).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> CsrGraph<f64> {
        CsrGraph::from_edges(3, &[(0, 1), (1, 2)], true).unwrap()
    }

    #[test]
    fn graph_invariants_enforced() {
        let loops = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]).unwrap();
        assert!(CsrGraph::new(loops, false).is_err());
        let asym = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        assert!(CsrGraph::new(asym.clone(), true).is_err());
        assert!(CsrGraph::new(asym, false).is_ok());
        let heavy = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 2.0), (1, 0, 2.0)]).unwrap();
        assert!(CsrGraph::new(heavy, true).is_err());
        assert!(
            CsrMatrix::<f64>::from_parts(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err()
        );
    }

    #[test]
    fn from_edges_symmetrizes_and_dedups() {
        let g = CsrGraph::<f64>::from_edges(3, &[(0, 1), (1, 0), (1, 1), (2, 1), (0, 1)], true)
            .unwrap();
        assert_eq!(g.nnz(), 4);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.edge_list(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = CsrGraph::<f64>::empty(1);
        assert_eq!(g.normalized().to_dense().data(), &[1.0]);
    }

    #[test]
    fn single_edge_gives_halves() {
        let g = CsrGraph::<f64>::from_edges(2, &[(0, 1)], true).unwrap();
        let r = g.normalized().to_dense();
        for &v in r.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn path_entries() {
        let r = path3().normalized().to_dense();
        assert!((r.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((r.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((r.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.get(0, 2), 0.0);
    }

    #[test]
    fn normalized_is_cached() {
        let g = path3();
        assert!(g.normalized().ptr_eq(g.normalized()));
    }

    #[test]
    fn spmm_shape_error() {
        let g = path3();
        let x = Tensor::<f64>::ones(2, 2);
        assert!(matches!(g.normalized().spmm(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn drop_edge_extremes() {
        let g = path3();
        let mut rng = Rng::new(0);
        assert_eq!(drop_edge(&g, 0.0, &mut rng).unwrap(), g);
        assert_eq!(drop_edge(&g, 1.0, &mut rng).unwrap().nnz(), 0);
        assert!(drop_edge(&g, 1.5, &mut rng).is_err());
        assert!(drop_edge(&g, -0.1, &mut rng).is_err());
    }

    #[test]
    fn drop_node_extremes() {
        let mut rng = Rng::new(0);
        assert!(drop_node_mask(5, 0.0, &mut rng).unwrap().iter().all(|&z| z));
        assert!(drop_node_mask(5, 1.0, &mut rng)
            .unwrap()
            .iter()
            .all(|&z| !z));
        assert!(drop_node_mask(5, 2.0, &mut rng).is_err());
    }

    #[test]
    fn star_ladies_probs() {
        let g = CsrGraph::<f64>::from_edges(4, &[(0, 1), (0, 2), (0, 3)], true).unwrap();
        let p = ladies_probs(&g, &[0, 1, 2, 3]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        for &leaf in &p[1..] {
            assert!((leaf - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(ladies_probs(&g, &[]).is_err());
        // Only the center selected: all mass on the leaves.
        let q = ladies_probs(&g, &[0]).unwrap();
        assert_eq!(q[0], 0.0);
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ladies_sample_edges() {
        let mut rng = Rng::new(5);
        let p = [0.0, 0.25, 0.0, 0.75];
        assert_eq!(ladies_sample(&p, 5, &mut rng).unwrap(), vec![1, 3]);
        assert_eq!(
            ladies_sample(&[0.0, 1.0, 0.0], 1, &mut rng).unwrap(),
            vec![1]
        );
        assert!(ladies_sample(&p, 0, &mut rng).is_err());
        assert_eq!(
            ladies_sample(&[0.0f64; 3], 2, &mut rng).unwrap(),
            Vec::<usize>::new()
        );
    }

    #[test]
    fn mask_columns_and_rows() {
        let g = path3();
        let m = g.mask(Some(&[true, false, true]), Some(&[false, true, true]));
        assert!(!m.is_undirected());
        assert_eq!(
            m.adjacency().to_dense().data(),
            &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
    }
}
