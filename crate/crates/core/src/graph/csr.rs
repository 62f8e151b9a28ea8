//! Compressed-row sparse matrices and the symmetric adjacency types built on them.

use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// Square sparse matrix in compressed row layout.
///
/// Column indices are strictly increasing within a row, so every row is
/// duplicate-free and products iterate columns in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed; explicit zeros are dropped.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n || *c >= n) {
            return Err(Error::Graph(format!(
                "entry ({r}, {c}) out of range for {n} nodes"
            )));
        }
        if let Some(&(_, _, v)) = triplets.iter().find(|t| !t.2.is_finite()) {
            return Err(Error::Graph(format!("non-finite weight {v}")));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let csr = Self {
            n,
            row_ptr,
            col_idx,
            values,
        };
        Ok(csr.without_zeros())
    }

    /// Builds from a dense square tensor, keeping nonzero entries.
    pub fn from_dense(t: &Tensor) -> Result<Self> {
        if t.rows() != t.cols() {
            return shape_err("Csr::from_dense", format!("{:?} is not square", t.shape()));
        }
        let n = t.rows();
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = t.get(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    fn without_zeros(self) -> Self {
        if self.values.iter().all(|&v| v != 0.0) {
            return self;
        }
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        Self {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    #[inline]
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// `(col, value)` pairs of row `i` in ascending column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_range(i);
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_range(i);
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.set(i, j, v);
            }
        }
        t
    }

    pub fn transpose(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Csr::from_triplets(self.n, trip).expect("transpose of a valid matrix")
    }

    /// True when `(i, j)` and `(j, i)` are both present with identical weights.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    /// Same sparsity pattern with new values.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Csr {
        assert_eq!(values.len(), self.nnz());
        Csr {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        }
    }

    /// Adds 1 to every diagonal entry, inserting it where absent.
    pub fn with_self_loops(&self) -> Csr {
        let mut trip: Vec<_> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect();
        trip.extend((0..self.n).map(|i| (i, i, 1.0)));
        Csr::from_triplets(self.n, trip).expect("valid triplets")
    }

    /// Submatrix on `nodes` (global indices), renumbered to `0..nodes.len()`
    /// in the given order. `local` maps global index to local index.
    pub fn induced(&self, nodes: &[usize], local: &dyn Fn(usize) -> Option<usize>) -> Csr {
        let m = nodes.len();
        let mut row_ptr = vec![0usize; m + 1];
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (li, &g) in nodes.iter().enumerate() {
            let start = entries.len();
            entries.extend(self.row(g).filter_map(|(j, v)| local(j).map(|lj| (lj, v))));
            entries[start..].sort_by_key(|e| e.0);
            row_ptr[li + 1] = entries.len();
        }
        let (col_idx, values) = entries.into_iter().unzip();
        Csr {
            n: m,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Exact sparse-dense product `self * h`; each output row sums its terms
    /// in ascending column order.
    pub fn matmul_dense(&self, h: &Tensor) -> Result<Tensor> {
        if h.rows() != self.n {
            return shape_err(
                "sp_dense_matmul",
                format!("{0}x{0} adjacency x {1:?}", self.n, h.shape()),
            );
        }
        let k = h.cols();
        let mut out = Tensor::zeros(self.n, k);
        for i in 0..self.n {
            let o = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (ov, &hv) in o.iter_mut().zip(h.row(j)) {
                    *ov += v * hv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * g`, accumulated by scattering rows in ascending row order.
    pub fn matmul_dense_t(&self, g: &Tensor) -> Result<Tensor> {
        if g.rows() != self.n {
            return shape_err(
                "sp_dense_matmul_t",
                format!("{0}x{0} adjacency x {1:?}", self.n, g.shape()),
            );
        }
        let k = g.cols();
        let mut out = Tensor::zeros(self.n, k);
        for i in 0..self.n {
            let gi = g.row(i).to_vec();
            for (j, v) in self.row(i) {
                for (ov, &gv) in out.row_mut(j).iter_mut().zip(&gi) {
                    *ov += v * gv;
                }
            }
        }
        Ok(out)
    }
}

/// Symmetric non-negative user-user adjacency without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency(Csr);

impl SparseAdjacency {
    pub fn empty(n: usize) -> Self {
        Self(Csr::empty(n))
    }

    /// Validates symmetry, non-negativity and the zero diagonal.
    pub fn new(csr: Csr) -> Result<Self> {
        if let Some(v) = csr.values().iter().find(|v| **v < 0.0) {
            return Err(Error::Graph(format!("negative edge weight {v}")));
        }
        if !csr.has_zero_diagonal() {
            return Err(Error::Graph("adjacency has self-loops".into()));
        }
        if !csr.is_symmetric() {
            return Err(Error::Graph(format!(
                "adjacency is not symmetric (max |a_ij - a_ji| = {})",
                csr.max_asymmetry()
            )));
        }
        Ok(Self(csr))
    }

    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        Self::new(Csr::from_triplets(n, triplets)?)
    }

    /// Undirected edge list; each pair is inserted in both directions and
    /// repeated pairs accumulate weight.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut trip = Vec::with_capacity(edges.len() * 2);
        for &(a, b, w) in edges {
            if a == b {
                continue;
            }
            trip.push((a, b, w));
            trip.push((b, a, w));
        }
        Self::from_triplets(n, trip)
    }

    pub fn from_dense(t: &Tensor) -> Result<Self> {
        Self::new(Csr::from_dense(t)?)
    }

    pub fn csr(&self) -> &Csr {
        &self.0
    }

    pub fn into_csr(self) -> Csr {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn nnz(&self) -> usize {
        self.0.nnz()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.0.nnz() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.0.col_idx()[self.0.row_range(i)]
    }

    pub fn to_dense(&self) -> Tensor {
        self.0.to_dense()
    }

    pub fn matmul_dense(&self, h: &Tensor) -> Result<Tensor> {
        self.0.matmul_dense(h)
    }

    /// Row-stochastic neighbor-mean operator: row `i` holds `1/|N(i)|` on
    /// each neighbor, and isolated nodes get an empty row.
    pub fn mean_operator(&self) -> Csr {
        let vals = (0..self.n())
            .flat_map(|i| {
                let d = self.0.degree(i);
                std::iter::repeat_n(1.0 / d as f64, d)
            })
            .collect();
        self.0.with_values(vals)
    }
}

/// `D̃^{-1/2}(U + I)D̃^{-1/2}` for a symmetric adjacency `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(Arc<Csr>);

impl NormalizedAdjacency {
    pub fn csr(&self) -> &Csr {
        &self.0
    }

    /// Shared handle for recording sparse products on a tape.
    pub fn shared(&self) -> Arc<Csr> {
        Arc::clone(&self.0)
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn to_dense(&self) -> Tensor {
        self.0.to_dense()
    }

    pub fn matmul_dense(&self, h: &Tensor) -> Result<Tensor> {
        self.0.matmul_dense(h)
    }

    /// Restriction of an already-normalized matrix to a node subset. The
    /// entries keep their global degree scaling.
    pub(crate) fn restricted(&self, nodes: &[usize], local: &dyn Fn(usize) -> Option<usize>) -> Self {
        Self(Arc::new(self.0.induced(nodes, local)))
    }

    /// Power-iteration estimate of the spectral radius.
    pub fn spectral_radius_estimate(&self, iters: usize) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        // Deterministic, non-degenerate start vector.
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0).collect();
        let mut lambda = 0.0;
        for _ in 0..iters {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            x.iter_mut().for_each(|v| *v /= norm);
            let y: Vec<f64> = (0..n)
                .map(|i| self.0.row(i).map(|(j, a)| a * x[j]).sum())
                .collect();
            lambda = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y;
        }
        lambda
    }
}

/// Symmetric normalization with self-loops. Isolated nodes end up with the
/// single entry `Â_ii = 1`.
pub fn normalize(adj: &SparseAdjacency) -> Result<NormalizedAdjacency> {
    let csr = adj.csr();
    if !csr.is_symmetric() {
        return Err(Error::Graph("cannot normalize an asymmetric adjacency".into()));
    }
    let tilde = csr.with_self_loops();
    let inv_sqrt: Vec<f64> = (0..tilde.n())
        .map(|i| {
            let d: f64 = tilde.row(i).map(|(_, v)| v).sum();
            1.0 / d.sqrt()
        })
        .collect();
    let mut vals = Vec::with_capacity(tilde.nnz());
    for i in 0..tilde.n() {
        for (j, v) in tilde.row(i) {
            vals.push(inv_sqrt[i] * v * inv_sqrt[j]);
        }
    }
    Ok(NormalizedAdjacency(Arc::new(tilde.with_values(vals))))
}

/// Edge-set union of all relations, with weights summed.
pub fn merge_relations<'a>(
    relations: impl IntoIterator<Item = &'a SparseAdjacency>,
) -> Result<SparseAdjacency> {
    let mut iter = relations.into_iter().peekable();
    let n = match iter.peek() {
        Some(first) => first.n(),
        None => return Err(Error::Empty("relation list")),
    };
    let mut trip = Vec::new();
    for rel in iter {
        if rel.n() != n {
            return Err(Error::Graph(format!(
                "relation has {} nodes, expected {n}",
                rel.n()
            )));
        }
        let c = rel.csr();
        for i in 0..n {
            trip.extend(c.row(i).map(|(j, v)| (i, j, v)));
        }
    }
    SparseAdjacency::from_triplets(n, trip)
}
