//! Learnable feature and topology augmentations and view construction.
//!
//! The topology augmenter builds a high-order network `A′` from node
//! representations `H`: entry `(i, j)` keeps the dot product `hᵢ·hⱼ` when it
//! strictly exceeds the mean of `hᵢ·hₖ` over every node `k` (including `i`
//! itself), and is zero otherwise. `A′` is directed; before message passing
//! it is symmetrized as `½(A′ + A′ᵀ)` and renormalized like any adjacency.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{ffn_forward, gcn_forward, FfnStack, GcnStack, Propagation};
use crate::error::{Error, Result};
use crate::graph::normalize_adjacency;
use crate::sparse::Csr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// `((Â, X₁), (Â, X₂))`
    #[default]
    Feature,
    /// `((Â, X), (Â′, X))`
    Topology,
    /// `((Â, X₁), (Â′, X₂))`
    Combined,
}

impl AugmentMode {
    pub fn uses_features(self) -> bool {
        matches!(self, AugmentMode::Feature | AugmentMode::Combined)
    }

    pub fn uses_topology(self) -> bool {
        matches!(self, AugmentMode::Topology | AugmentMode::Combined)
    }
}

/// Pair of feed-forward augmenters `f_Θ₁`, `f_Θ₂` with identical layer shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureAugmenter {
    pub f1: FfnStack,
    pub f2: FfnStack,
}

impl FeatureAugmenter {
    pub fn new(f1: FfnStack, f2: FfnStack) -> Result<Self> {
        let shapes = |s: &FfnStack| s.weights().iter().map(Tensor::shape).collect::<Vec<_>>();
        if shapes(&f1) != shapes(&f2) {
            return Err(Error::shape(
                "feature augmenter",
                format!("f1 layers {:?} vs f2 layers {:?}", shapes(&f1), shapes(&f2)),
            ));
        }
        Ok(Self { f1, f2 })
    }

    pub fn out_dim(&self) -> usize {
        self.f1.out_dim()
    }

    /// `(f_Θ₁(X), f_Θ₂(X))`, outside of training.
    pub fn augment(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.f1.forward(x)?, self.f2.forward(x)?))
    }
}

/// GNN `h_Φ` producing the high-order representations `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologyAugmenter {
    pub gnn: GcnStack,
}

impl TopologyAugmenter {
    pub fn new(gnn: GcnStack) -> Self {
        Self { gnn }
    }

    pub fn out_dim(&self) -> usize {
        self.gnn.out_dim()
    }

    /// `H = h_Φ(Â, X)`, outside of training.
    pub fn high_order_features(&self, a_hat: &Arc<Csr>, x: &Tensor) -> Result<Tensor> {
        self.gnn.forward(a_hat, x)
    }

    /// Normalized `Â′` for message passing, outside of training.
    pub fn propagation(&self, a_hat: &Arc<Csr>, x: &Tensor) -> Result<Csr> {
        let h = self.high_order_features(a_hat, x)?;
        Ok(normalize_high_order(&build_high_order_network(&h)))
    }
}

/// `g(hᵢ, hⱼ) = hᵢ · hⱼ`.
pub fn similarity(hi: &[f64], hj: &[f64]) -> Result<f64> {
    if hi.len() != hj.len() {
        return Err(Error::shape(
            "similarity",
            format!("lengths {} and {}", hi.len(), hj.len()),
        ));
    }
    Ok(hi.iter().zip(hj).map(|(a, b)| a * b).sum())
}

/// Dense thresholded similarity matrix and its selection mask.
///
/// `mask[i*N + j]` is true iff `hᵢ·hⱼ > mean_k hᵢ·hₖ`; masked-out entries are 0.
pub fn thresholded_similarity(h: &Tensor) -> (Tensor, Vec<bool>) {
    let n = h.rows();
    let mut s = Tensor::zeros(n, n);
    let mut mask = vec![false; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum();
        }
        let mean = row.iter().sum::<f64>() / n as f64;
        for (j, &v) in row.iter().enumerate() {
            if v > mean {
                mask[i * n + j] = true;
                s.set(i, j, v);
            }
        }
    }
    (s, mask)
}

/// Sparse high-order network `A′`; stored entries are exactly the kept pairs.
pub fn build_high_order_network(h: &Tensor) -> Csr {
    let (s, mask) = thresholded_similarity(h);
    let n = h.rows();
    let kept = (0..n * n)
        .filter(|&k| mask[k])
        .map(|k| (k / n, k % n, s.data()[k]));
    Csr::from_triplets(n, n, kept).expect("indices bounded by n")
}

/// `D^-1/2 (½(A′ + A′ᵀ) + I) D^-1/2`.
pub fn normalize_high_order(a_prime: &Csr) -> Csr {
    normalize_adjacency(&a_prime.symmetrize())
}

/// Tape version of [`normalize_high_order`] for a dense `A′` node.
pub fn normalize_high_order_dense(tape: &mut Tape, a_prime: Var) -> Result<Var> {
    let n = tape.value(a_prime).rows();
    let at = tape.transpose(a_prime)?;
    let sum = tape.add(a_prime, at)?;
    let sym = tape.scale(sum, 0.5)?;
    let eye = tape.constant(Tensor::identity(n));
    let looped = tape.add(sym, eye)?;
    let mag = tape.abs(looped)?;
    let deg = tape.row_sum(mag)?;
    let inv_sqrt = tape.pow_scalar(deg, -0.5)?;
    let left = tape.scale_rows(looped, inv_sqrt)?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    tape.scale_cols(left, inv_sqrt_t)
}

/// Records `(f_Θ₁(X), f_Θ₂(X))`.
pub fn augment_features(tape: &mut Tape, x: Var, f1: &[Var], f2: &[Var]) -> Result<(Var, Var)> {
    Ok((ffn_forward(tape, x, f1)?, ffn_forward(tape, x, f2)?))
}

/// Records `H = h_Φ(Â, X)`.
pub fn high_order_features(tape: &mut Tape, a_hat: &Arc<Csr>, x: Var, phi: &[Var]) -> Result<Var> {
    gcn_forward(tape, &Propagation::Sparse(Arc::clone(a_hat)), x, phi)
}

/// Augmenter parameters already recorded on a tape.
#[derive(Clone, Debug, Default)]
pub struct AugmenterVars {
    pub f1: Option<Vec<Var>>,
    pub f2: Option<Vec<Var>>,
    pub topo: Option<Vec<Var>>,
    /// Precomputed `Â′` to use instead of recomputing from `topo` (gradients
    /// then do not reach `Φ`).
    pub cached_topology: Option<Arc<Csr>>,
}

#[derive(Clone, Debug)]
pub struct View {
    pub adjacency: Propagation,
    pub features: Var,
}

/// Two views of the same node set.
#[derive(Clone, Debug)]
pub struct ViewPair {
    pub view1: View,
    pub view2: View,
    /// Raw thresholded `A′` (dense, before normalization) when it was rebuilt.
    pub high_order: Option<Var>,
}

/// Builds the two views for `mode`.
pub fn make_views(
    tape: &mut Tape,
    a_hat: &Arc<Csr>,
    x: Var,
    mode: AugmentMode,
    aug: &AugmenterVars,
) -> Result<ViewPair> {
    let base = Propagation::Sparse(Arc::clone(a_hat));

    let (x1, x2) = if mode.uses_features() {
        let (Some(f1), Some(f2)) = (&aug.f1, &aug.f2) else {
            return Err(Error::Config(format!("{mode:?} mode needs feature augmenters")));
        };
        augment_features(tape, x, f1, f2)?
    } else {
        (x, x)
    };

    let (second, high_order) = if mode.uses_topology() {
        if let Some(cached) = &aug.cached_topology {
            (Propagation::Sparse(Arc::clone(cached)), None)
        } else {
            let Some(phi) = &aug.topo else {
                return Err(Error::Config(format!("{mode:?} mode needs a topology augmenter")));
            };
            let h = high_order_features(tape, a_hat, x, phi)?;
            let a_prime = tape.thresholded_similarity(h)?;
            let a_norm = normalize_high_order_dense(tape, a_prime)?;
            (Propagation::Dense(a_norm), Some(a_prime))
        }
    } else {
        (base.clone(), None)
    };

    Ok(ViewPair {
        view1: View {
            adjacency: base,
            features: x1,
        },
        view2: View {
            adjacency: second,
            features: x2,
        },
        high_order,
    })
}
