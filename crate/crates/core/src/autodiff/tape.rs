use std::sync::Arc;

use super::tensor::{dot, Tensor};
use crate::augment::thresholded_similarity;
use crate::error::{Error, Result};
use crate::sparse::Csr;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Spmm(Arc<Csr>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    PowScalar(Var, f64),
    MaxConst(Var, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ColumnVariance(Var),
    MeanCenterColumns(Var),
    RowL2Normalize(Var),
    FrobeniusNorm(Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentPool {
        x: Var,
        ids: Arc<[usize]>,
        counts: Arc<[usize]>,
        mean: bool,
    },
    ThresholdedSimilarity(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape over dense 2-D tensors.
///
/// Nodes are appended in evaluation order, so indices are already a
/// topological order. A tape is single-use: [`Tape::backward`] consumes it,
/// after which only value and gradient reads are allowed.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a trainable leaf (`requires_grad = true`).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a constant leaf (`requires_grad = false`).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`. `None` before
    /// backward or for nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::Lifecycle(
                "cannot record operations on a consumed tape".into(),
            ));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn need_rows(&self, op: &'static str, v: Var) -> Result<usize> {
        let rows = self.value(v).rows();
        if rows < 2 {
            return Err(Error::DegenerateBatch { op, rows });
        }
        Ok(rows)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Constant sparse matrix times a recorded dense tensor.
    pub fn spmm(&mut self, adj: &Arc<Csr>, x: Var) -> Result<Var> {
        let out = adj.spmm(self.value(x))?;
        self.push(out, Op::Spmm(Arc::clone(adj), x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Hadamard(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(out, Op::Relu(a), &[a])
    }

    /// Elementwise square root. Negative inputs give NaN, which the trainer
    /// reports as a non-finite loss term.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::PowScalar(a, p), &[a])
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x < c { c } else { x });
        self.push(out, Op::MaxConst(a, c), &[a])
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Mean of all entries, as a 1x1 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.data().len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let out = Tensor::scalar(t.sum() / n as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Per-row sums, as an Nx1 tensor.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let sums: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(t.rows(), 1, sums)?;
        self.push(out, Op::RowSum(a), &[a])
    }

    /// Unbiased per-column variance (denominator `B - 1`), as a 1xD tensor.
    pub fn column_variance(&mut self, a: Var) -> Result<Var> {
        let rows = self.need_rows("column_variance", a)?;
        let t = self.value(a);
        let means = t.column_means();
        let mut var = vec![0.0; t.cols()];
        for r in 0..rows {
            for ((v, x), m) in var.iter_mut().zip(t.row(r)).zip(&means) {
                let d = x - m;
                *v += d * d;
            }
        }
        let denom = (rows - 1) as f64;
        var.iter_mut().for_each(|v| *v /= denom);
        let out = Tensor::row_vector(&var);
        self.push(out, Op::ColumnVariance(a), &[a])
    }

    pub fn mean_center_columns(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let means = t.column_means();
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (x, m) in out.row_mut(r).iter_mut().zip(&means) {
                *x -= m;
            }
        }
        self.push(out, Op::MeanCenterColumns(a), &[a])
    }

    /// Scales every row to unit L2 norm. Zero rows are rejected.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateRow {
                    op: "row_l2_normalize",
                    row: r,
                });
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        self.push(out, Op::RowL2Normalize(a), &[a])
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).frobenius_norm());
        self.push(out, Op::FrobeniusNorm(a), &[a])
    }

    /// `diag(v) * x` for an Nx1 column `v`.
    pub fn scale_rows(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xt, vt) = (self.value(x), self.value(v));
        if vt.shape() != (xt.rows(), 1) {
            return Err(Error::shape(
                "scale_rows",
                format!("{:?} scaled by {:?}", xt.shape(), vt.shape()),
            ));
        }
        let mut out = xt.clone();
        for r in 0..out.rows() {
            let s = vt.data()[r];
            out.row_mut(r).iter_mut().for_each(|e| *e *= s);
        }
        self.push(out, Op::ScaleRows(x, v), &[x, v])
    }

    /// `x * diag(v)` for a 1xD row `v`.
    pub fn scale_cols(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xt, vt) = (self.value(x), self.value(v));
        if vt.shape() != (1, xt.cols()) {
            return Err(Error::shape(
                "scale_cols",
                format!("{:?} scaled by {:?}", xt.shape(), vt.shape()),
            ));
        }
        let mut out = xt.clone();
        for r in 0..out.rows() {
            for (e, s) in out.row_mut(r).iter_mut().zip(vt.data()) {
                *e *= s;
            }
        }
        self.push(out, Op::ScaleCols(x, v), &[x, v])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hstack(self.value(b))?;
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Vertical stacking of `a` over `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).vstack(self.value(b))?;
        self.push(out, Op::ConcatRows(a, b), &[a, b])
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let rows = self.value(x).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Range {
                id: bad,
                n: rows,
                context: Some("gather_rows".into()),
            });
        }
        let out = self.value(x).select_rows(idx);
        self.push(out, Op::GatherRows(x, idx.into()), &[x])
    }

    /// Pools rows into `n_groups` groups by `ids` (sum or mean).
    pub fn segment_pool(&mut self, x: Var, ids: &[usize], n_groups: usize, mean: bool) -> Result<Var> {
        let t = self.value(x);
        if ids.len() != t.rows() {
            return Err(Error::shape(
                "segment_pool",
                format!("{} ids for {} rows", ids.len(), t.rows()),
            ));
        }
        let mut counts = vec![0usize; n_groups];
        for &g in ids {
            if g >= n_groups {
                return Err(Error::Range {
                    id: g,
                    n: n_groups,
                    context: Some("graph id".into()),
                });
            }
            counts[g] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Consistency(format!("readout: graph {g} has no nodes")));
        }
        let mut out = Tensor::zeros(n_groups, t.cols());
        for (r, &g) in ids.iter().enumerate() {
            for (o, v) in out.row_mut(g).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        if mean {
            for (g, &c) in counts.iter().enumerate() {
                out.row_mut(g).iter_mut().for_each(|v| *v /= c as f64);
            }
        }
        let op = Op::SegmentPool {
            x,
            ids: ids.into(),
            counts: counts.into(),
            mean,
        };
        self.push(out, op, &[x])
    }

    /// Dense `N x N` matrix of dot products `h_i . h_j`, keeping only the
    /// entries that strictly exceed their row mean. The selection mask is a
    /// constant for differentiation purposes.
    pub fn thresholded_similarity(&mut self, h: Var) -> Result<Var> {
        let (out, mask) = thresholded_similarity(self.value(h));
        self.push(out, Op::ThresholdedSimilarity(h, mask), &[h])
    }

    /// Runs the backward pass from a 1x1 `loss`, consuming the tape.
    ///
    /// Afterwards [`Tape::grad`] returns `d loss / d v` for every node that
    /// requires gradients; leaves unreachable from `loss` get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Lifecycle("backward called on a consumed tape".into()));
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {shape:?}")));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                let (r, c) = node.value.shape();
                grads[i] = Some(Tensor::zeros(r, c));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.matmul_t(val(*b)));
                }
                if wants(*b) {
                    acc(*b, val(*a).t_matmul(g));
                }
            }
            Op::Spmm(adj, x) => {
                let gx = adj.transpose().spmm(g).expect("shape checked in forward");
                acc(*x, gx);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Sqrt(a) => acc(
                *a,
                g.zip_map(&node.value, |gx, y| if y > 0.0 { gx / (2.0 * y) } else { 0.0 }),
            ),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gx, x| 2.0 * x * gx)),
            Op::Abs(a) => acc(
                *a,
                g.zip_map(val(*a), |gx, x| {
                    if x > 0.0 {
                        gx
                    } else if x < 0.0 {
                        -gx
                    } else {
                        0.0
                    }
                }),
            ),
            Op::PowScalar(a, p) => acc(*a, g.zip_map(val(*a), |gx, x| gx * p * x.powf(p - 1.0))),
            Op::MaxConst(a, c) => acc(*a, g.zip_map(val(*a), |gx, x| if x > *c { gx } else { 0.0 })),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::full(r, c, g.item() / (r * c) as f64));
            }
            Op::RowSum(a) => {
                let x = val(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gr = g.data()[r];
                    out.row_mut(r).iter_mut().for_each(|e| *e = gr);
                }
                acc(*a, out);
            }
            Op::ColumnVariance(a) => {
                let x = val(*a);
                let means = x.column_means();
                let denom = (x.rows() - 1) as f64;
                let mut out = x.clone();
                for r in 0..out.rows() {
                    for ((e, m), gj) in out.row_mut(r).iter_mut().zip(&means).zip(g.data()) {
                        *e = 2.0 * (*e - m) / denom * gj;
                    }
                }
                acc(*a, out);
            }
            Op::MeanCenterColumns(a) => {
                let gm = g.column_means();
                let mut out = g.clone();
                for r in 0..out.rows() {
                    for (e, m) in out.row_mut(r).iter_mut().zip(&gm) {
                        *e -= m;
                    }
                }
                acc(*a, out);
            }
            Op::RowL2Normalize(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = dot(x.row(r), x.row(r)).sqrt();
                    let proj = dot(y.row(r), g.row(r));
                    for ((o, yv), gv) in out.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = (gv - yv * proj) / norm;
                    }
                }
                acc(*a, out);
            }
            Op::FrobeniusNorm(a) => {
                let n = node.value.item();
                let gs = g.item();
                let contrib = if n > 0.0 {
                    val(*a).map(|x| gs * x / n)
                } else {
                    let (r, c) = val(*a).shape();
                    Tensor::zeros(r, c)
                };
                acc(*a, contrib);
            }
            Op::ScaleRows(x, v) => {
                let (xt, vt) = (val(*x), val(*v));
                if wants(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let s = vt.data()[r];
                        gx.row_mut(r).iter_mut().for_each(|e| *e *= s);
                    }
                    acc(*x, gx);
                }
                if wants(*v) {
                    let gv: Vec<f64> = (0..xt.rows()).map(|r| dot(g.row(r), xt.row(r))).collect();
                    acc(*v, Tensor::from_vec(xt.rows(), 1, gv).unwrap());
                }
            }
            Op::ScaleCols(x, v) => {
                let (xt, vt) = (val(*x), val(*v));
                if wants(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        for (e, s) in gx.row_mut(r).iter_mut().zip(vt.data()) {
                            *e *= s;
                        }
                    }
                    acc(*x, gx);
                }
                if wants(*v) {
                    let mut gv = vec![0.0; xt.cols()];
                    for r in 0..xt.rows() {
                        for ((o, gx), xv) in gv.iter_mut().zip(g.row(r)).zip(xt.row(r)) {
                            *o += gx * xv;
                        }
                    }
                    acc(*v, Tensor::row_vector(&gv));
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let rows = g.rows();
                let mut ga = Tensor::zeros(rows, ca);
                let mut gb = Tensor::zeros(rows, cb);
                for r in 0..rows {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::ConcatRows(a, b) => {
                let ra = val(*a).rows();
                let cols = g.cols();
                let ga = Tensor::from_vec(ra, cols, g.data()[..ra * cols].to_vec()).unwrap();
                let gb = Tensor::from_vec(g.rows() - ra, cols, g.data()[ra * cols..].to_vec()).unwrap();
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = val(*x).shape();
                let mut gx = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::SegmentPool { x, ids, counts, mean } => {
                let (r, c) = val(*x).shape();
                let mut gx = Tensor::zeros(r, c);
                for (row, &grp) in ids.iter().enumerate() {
                    let w = if *mean { 1.0 / counts[grp] as f64 } else { 1.0 };
                    for (o, v) in gx.row_mut(row).iter_mut().zip(g.row(grp)) {
                        *o = w * v;
                    }
                }
                acc(*x, gx);
            }
            Op::ThresholdedSimilarity(h, mask) => {
                let n = g.rows();
                let mut gs = g.clone();
                for (e, &keep) in gs.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *e = 0.0;
                    }
                }
                let mut sym = gs.clone();
                for i in 0..n {
                    for j in 0..n {
                        let v = sym.get(i, j) + gs.get(j, i);
                        sym.set(i, j, v);
                    }
                }
                acc(*h, sym.matmul_unchecked(val(*h)));
            }
        }
    }
}
