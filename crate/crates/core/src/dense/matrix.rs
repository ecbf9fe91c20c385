use serde::{Deserialize, Serialize};

use super::NnError;
use crate::exec::Exec;

/// Row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if rows * cols != data.len() {
            return Err(NnError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the listed rows, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Horizontal concatenation.
    pub fn hconcat(parts: &[&DenseMatrix]) -> Result<DenseMatrix, NnError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(NnError::Shape("hconcat row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// `self * w` where `w` is `cols x k`.
    pub fn matmul(&self, w: &DenseMatrix) -> DenseMatrix {
        self.matmul_with(w, Exec::default())
    }

    pub fn matmul_with(&self, w: &DenseMatrix, exec: Exec) -> DenseMatrix {
        assert_eq!(self.cols, w.rows, "matmul inner dimension");
        let k = w.cols;
        let mut out = DenseMatrix::zeros(self.rows, k);
        exec.rows_mut(&mut out.data, k, |i, orow| {
            for (p, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, w.row(p), orow);
                }
            }
        });
        out
    }

    /// `self^T * d` where `d` has the same row count; result is `cols x d.cols`.
    pub fn t_matmul(&self, d: &DenseMatrix) -> DenseMatrix {
        self.t_matmul_with(d, Exec::default())
    }

    pub fn t_matmul_with(&self, d: &DenseMatrix, exec: Exec) -> DenseMatrix {
        assert_eq!(self.rows, d.rows, "t_matmul row mismatch");
        let k = d.cols;
        let mut out = DenseMatrix::zeros(self.cols, k);
        // each output row p accumulates over batch rows in order
        exec.rows_mut(&mut out.data, k, |p, orow| {
            for i in 0..self.rows {
                let a = self.data[i * self.cols + p];
                if a != 0.0 {
                    axpy(a, d.row(i), orow);
                }
            }
        });
        out
    }

    /// `self * w^T` where `w` is `k x cols`.
    pub fn matmul_t(&self, w: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, w.cols, "matmul_t inner dimension");
        let k = w.rows;
        let mut out = DenseMatrix::zeros(self.rows, k);
        Exec::default().rows_mut(&mut out.data, k, |i, orow| {
            let a = self.row(i);
            for (q, o) in orow.iter_mut().enumerate() {
                *o = dot(a, w.row(q));
            }
        });
        out
    }

    /// Column sums.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|v| **v != 0.0).count() as f64 / self.data.len() as f64
    }
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    let c = out.cols();
    Exec::default().rows_mut(out.data_mut(), c, |_, row| softmax_in_place(row));
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Sparse rows with values, CSR layout. Used for adjacency positional
/// embeddings and sparse features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseRows {
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, NnError> {
        if offsets.is_empty()
            || *offsets.last().unwrap() != indices.len()
            || indices.len() != values.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
            || indices.iter().any(|&j| j as usize >= cols)
        {
            return Err(NnError::Shape("malformed sparse rows".into()));
        }
        Ok(Self {
            cols,
            offsets,
            indices,
            values,
        })
    }

    /// Binary rows from a graph's out-adjacency.
    pub fn from_adjacency(g: &crate::graph::CsrGraph) -> Self {
        let n = g.n();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(g.m());
        offsets.push(0);
        for i in 0..n {
            indices.extend_from_slice(g.out_neighbors(i));
            offsets.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        Self {
            cols: n,
            offsets,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Self {
            cols: m.cols(),
            offsets,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows(), self.cols);
        for i in 0..self.rows() {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                m.set(i, j as usize, v);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn gather_rows(&self, idx: &[usize]) -> SparseRows {
        let mut offsets = Vec::with_capacity(idx.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for &i in idx {
            let (ix, v) = self.row(i);
            indices.extend_from_slice(ix);
            values.extend_from_slice(v);
            offsets.push(indices.len());
        }
        SparseRows {
            cols: self.cols,
            offsets,
            indices,
            values,
        }
    }

    /// Drops column indices at or beyond `cols`, shrinking the width.
    pub fn truncate_cols(&self, cols: usize) -> SparseRows {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.rows() {
            let (ix, v) = self.row(i);
            for (&j, &x) in ix.iter().zip(v) {
                if (j as usize) < cols {
                    indices.push(j);
                    values.push(x);
                }
            }
            offsets.push(indices.len());
        }
        SparseRows {
            cols,
            offsets,
            indices,
            values,
        }
    }

    /// `self * w` with cost proportional to nnz.
    pub fn matmul(&self, w: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, w.rows(), "sparse matmul inner dimension");
        let k = w.cols();
        let mut out = DenseMatrix::zeros(self.rows(), k);
        Exec::default().rows_mut(out.data_mut(), k, |i, orow| {
            let (ix, v) = self.row(i);
            for (&j, &x) in ix.iter().zip(v) {
                axpy(x, w.row(j as usize), orow);
            }
        });
        out
    }

    /// Scatter-adds `self^T * d` into `acc` (`cols x d.cols`).
    pub fn t_matmul_into(&self, d: &DenseMatrix, acc: &mut DenseMatrix) {
        for i in 0..self.rows() {
            let (ix, v) = self.row(i);
            let drow = d.row(i);
            for (&j, &x) in ix.iter().zip(v) {
                axpy(x, drow, acc.row_mut(j as usize));
            }
        }
    }
}

/// Input matrix for a network branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureMatrix {
    Dense(DenseMatrix),
    Sparse(SparseRows),
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.rows(),
            FeatureMatrix::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.cols(),
            FeatureMatrix::Sparse(m) => m.cols(),
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> FeatureMatrix {
        match self {
            FeatureMatrix::Dense(m) => FeatureMatrix::Dense(m.gather_rows(idx)),
            FeatureMatrix::Sparse(m) => FeatureMatrix::Sparse(m.gather_rows(idx)),
        }
    }

    pub fn matmul(&self, w: &DenseMatrix) -> DenseMatrix {
        match self {
            FeatureMatrix::Dense(m) => m.matmul(w),
            FeatureMatrix::Sparse(m) => m.matmul(w),
        }
    }

    pub fn t_matmul_into(&self, d: &DenseMatrix, acc: &mut DenseMatrix) {
        match self {
            FeatureMatrix::Dense(m) => {
                let g = m.t_matmul(d);
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
            FeatureMatrix::Sparse(m) => m.t_matmul_into(d, acc),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            FeatureMatrix::Dense(m) => m.is_finite(),
            FeatureMatrix::Sparse(m) => m.values.iter().all(|v| v.is_finite()),
        }
    }

    /// Keeps dense storage unless the matrix is mostly zeros.
    pub fn auto(m: DenseMatrix) -> FeatureMatrix {
        if m.density() < 0.1 {
            FeatureMatrix::Sparse(SparseRows::from_dense(&m))
        } else {
            FeatureMatrix::Dense(m)
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            FeatureMatrix::Dense(m) => m.clone(),
            FeatureMatrix::Sparse(m) => m.to_dense(),
        }
    }
}
