//! Compressed sparse row matrices used for graph adjacency.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// CSR matrix with `f64` weights.
///
/// Invariants: `indptr` has `n_rows + 1` monotone entries starting at 0,
/// column indices are strictly increasing within each row (no duplicates),
/// and every column index is `< n_cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, weight)` triplets; repeated
    /// coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            if r >= n_rows {
                return Err(Error::Range {
                    id: r,
                    n: n_rows,
                    context: Some("row index".into()),
                });
            }
            if c >= n_cols {
                return Err(Error::Range {
                    id: c,
                    n: n_cols,
                    context: Some("column index".into()),
                });
            }
        }
        t.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, w) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += w;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(w);
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Unweighted adjacency from an arc list with set semantics: every
    /// distinct `(src, dst)` becomes a single entry of weight 1.
    pub fn from_arcs(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut arcs: Vec<(usize, usize)> = arcs.into_iter().collect();
        arcs.sort_unstable();
        arcs.dedup();
        Self::from_triplets(n, n, arcs.into_iter().map(|(r, c)| (r, c, 1.0)))
    }

    /// Keeps entries whose value is nonzero.
    pub fn from_dense(t: &Tensor) -> Self {
        let mut indptr = Vec::with_capacity(t.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..t.rows() {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows: t.rows(),
            n_cols: t.cols(),
            indptr,
            indices,
            values,
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and weights of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let k = next[c];
            indices[k] = r;
            values[k] = v;
            next[c] += 1;
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        let t = self.transpose();
        let merged = self
            .iter()
            .chain(t.iter())
            .map(|(r, c, v)| (r, c, 0.5 * v));
        let mut out = Self::from_triplets(self.n_rows, self.n_cols, merged)
            .expect("indices already validated");
        out.prune_zeros();
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        self.iter().all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
            && self.transpose().iter().all(|(r, c, v)| (self.get(r, c) - v).abs() <= tol)
    }

    fn prune_zeros(&mut self) {
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        indptr.push(0);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    /// Sparse-dense product `self * x`.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        if self.n_cols != x.rows() {
            return Err(Error::shape(
                "spmm",
                format!(
                    "{}x{} sparse times {}x{} dense",
                    self.n_rows,
                    self.n_cols,
                    x.rows(),
                    x.cols()
                ),
            ));
        }
        let mut out = Tensor::zeros(self.n_rows, x.cols());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let o = out.row_mut(r);
            for (&c, &w) in cols.iter().zip(vals) {
                for (ov, xv) in o.iter_mut().zip(x.row(c)) {
                    *ov += w * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            t.set(r, c, v);
        }
        t
    }

    /// Checks the structural invariants listed on the type.
    pub fn validate(&self) -> Result<()> {
        if self.indptr.len() != self.n_rows + 1 || self.indptr[0] != 0 {
            return Err(Error::Consistency("csr: bad row pointer length".into()));
        }
        if self.indptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Consistency("csr: row pointers not monotone".into()));
        }
        if *self.indptr.last().unwrap() != self.indices.len() || self.indices.len() != self.values.len() {
            return Err(Error::Consistency("csr: length mismatch".into()));
        }
        for r in 0..self.n_rows {
            let (cols, _) = self.row(r);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Consistency(format!("csr: row {r} not strictly sorted")));
            }
            if let Some(&c) = cols.last() {
                if c >= self.n_cols {
                    return Err(Error::Range {
                        id: c,
                        n: self.n_cols,
                        context: Some(format!("row {r}")),
                    });
                }
            }
        }
        Ok(())
    }

    /// Block-diagonal stacking of square matrices.
    pub fn block_diag(blocks: &[&Csr]) -> Self {
        let n: usize = blocks.iter().map(|b| b.n_rows).sum();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut offset = 0;
        for b in blocks {
            for r in 0..b.n_rows {
                let (cols, vals) = b.row(r);
                indices.extend(cols.iter().map(|c| c + offset));
                values.extend_from_slice(vals);
                indptr.push(indices.len());
            }
            offset += b.n_cols;
        }
        Self {
            n_rows: n,
            n_cols: offset,
            indptr,
            indices,
            values,
        }
    }
}
