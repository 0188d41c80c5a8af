//! Shared GNN encoder, feed-forward stacks, view aggregation and readout.
//!
//! Layers have no bias. ReLU sits between layers and the last layer is
//! linear.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sparse::Csr;

/// Glorot-uniform matrix, entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}

/// Message-passing stack `σ(Â … σ(Â X W⁽¹⁾) … W⁽ᴸ⁾)`.
///
/// Each weight is stored `d_in x d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnStack {
    weights: Vec<Tensor>,
}

/// Dense feed-forward stack.
///
/// Each weight is stored `d_out x d_in` (one row per output unit), so a layer
/// computes `X Wᵀ`. Row orientation matters for the stacked-weight
/// orthonormality penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnStack {
    weights: Vec<Tensor>,
}

fn check_chain(weights: &[Tensor], io: impl Fn(&Tensor) -> (usize, usize)) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Config("a layer stack needs at least one layer".into()));
    }
    for (l, pair) in weights.windows(2).enumerate() {
        let (_, out) = io(&pair[0]);
        let (inp, _) = io(&pair[1]);
        if out != inp {
            return Err(Error::shape(
                "layer stack",
                format!("layer {l} outputs {out} but layer {} expects {inp}", l + 1),
            ));
        }
    }
    if let Some(l) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::Consistency(format!("layer {l} has non-finite weights")));
    }
    Ok(())
}

impl GcnStack {
    pub fn new(weights: Vec<Tensor>) -> Result<Self> {
        check_chain(&weights, |w| (w.rows(), w.cols()))?;
        Ok(Self { weights })
    }

    /// Glorot-initialized stack with layer widths `widths[0] -> … -> widths[L]`.
    pub fn glorot(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let weights = widths.windows(2).map(|w| glorot(w[0], w[1], rng)).collect();
        Self::new(weights)
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().unwrap().cols()
    }

    /// Forward pass outside of training.
    pub fn forward(&self, adj: &Arc<Csr>, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ws: Vec<Var> = self.weights.iter().map(|w| tape.constant(w.clone())).collect();
        let out = gcn_forward(&mut tape, &Propagation::Sparse(Arc::clone(adj)), xv, &ws)?;
        Ok(tape.value(out).clone())
    }
}

impl FfnStack {
    pub fn new(weights: Vec<Tensor>) -> Result<Self> {
        check_chain(&weights, |w| (w.cols(), w.rows()))?;
        Ok(Self { weights })
    }

    /// Glorot-initialized stack with layer widths `widths[0] -> … -> widths[L]`.
    pub fn glorot(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let weights = widths.windows(2).map(|w| glorot(w[1], w[0], rng)).collect();
        Self::new(weights)
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().unwrap().rows()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ws: Vec<Var> = self.weights.iter().map(|w| tape.constant(w.clone())).collect();
        let out = ffn_forward(&mut tape, xv, &ws)?;
        Ok(tape.value(out).clone())
    }
}

/// Propagation matrix for one message-passing pass.
#[derive(Clone, Debug)]
pub enum Propagation {
    /// Fixed normalized adjacency.
    Sparse(Arc<Csr>),
    /// Dense adjacency recorded on the tape (gradients flow into it).
    Dense(Var),
}

impl Propagation {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Propagation::Sparse(a) => tape.spmm(a, x),
            Propagation::Dense(a) => tape.matmul(*a, x),
        }
    }
}

/// Records the GCN stack on `tape`. `weights` are `d_in x d_out` leaves.
pub fn gcn_forward(tape: &mut Tape, adj: &Propagation, x: Var, weights: &[Var]) -> Result<Var> {
    let Some(first) = weights.first() else {
        return Err(Error::Config("gcn_forward needs at least one layer".into()));
    };
    let (x_cols, w_rows) = (tape.value(x).cols(), tape.value(*first).rows());
    if x_cols != w_rows {
        return Err(Error::shape(
            "gcn_forward",
            format!("input width {x_cols} but first layer expects {w_rows}"),
        ));
    }
    let mut h = x;
    for (l, &w) in weights.iter().enumerate() {
        let xw = tape.matmul(h, w)?;
        h = adj.apply(tape, xw)?;
        if l + 1 < weights.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Records the feed-forward stack on `tape`. `weights` are `d_out x d_in`
/// leaves.
pub fn ffn_forward(tape: &mut Tape, x: Var, weights: &[Var]) -> Result<Var> {
    let Some(first) = weights.first() else {
        return Err(Error::Config("ffn_forward needs at least one layer".into()));
    };
    let (x_cols, w_cols) = (tape.value(x).cols(), tape.value(*first).cols());
    if x_cols != w_cols {
        return Err(Error::shape(
            "ffn_forward",
            format!("input width {x_cols} but first layer expects {w_cols}"),
        ));
    }
    let mut h = x;
    for (l, &w) in weights.iter().enumerate() {
        let wt = tape.transpose(w)?;
        h = tape.matmul(h, wt)?;
        if l + 1 < weights.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// `Z = [Z₁ | Z₂]`.
pub fn aggregate(tape: &mut Tape, z1: Var, z2: Var) -> Result<Var> {
    tape.concat_cols(z1, z2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    #[default]
    Mean,
    Sum,
}

/// Pools node rows into one row per graph id.
pub fn readout(tape: &mut Tape, z: Var, graph_ids: &[usize], mode: ReadoutMode) -> Result<Var> {
    let n_groups = graph_ids.iter().max().map_or(0, |m| m + 1);
    tape.segment_pool(z, graph_ids, n_groups, mode == ReadoutMode::Mean)
}

/// Value-level readout.
pub fn readout_tensor(z: &Tensor, graph_ids: &[usize], mode: ReadoutMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let out = readout(&mut tape, zv, graph_ids, mode)?;
    Ok(tape.value(out).clone())
}
