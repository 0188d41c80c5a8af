//! Graph data model and graph-level preprocessing.

pub mod io;
mod sbm;
mod split;

pub use sbm::{generate_sbm, SbmConfig};
pub use split::{make_splits, make_stratified_splits, Split, DEFAULT_SPLIT_RATIOS};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::sparse::Csr;

/// A graph `G = (A, X)` with optional node labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: Csr,
    features: Tensor,
    labels: Option<Vec<Option<usize>>>,
    graph_label: Option<usize>,
}

impl Graph {
    pub fn new(adjacency: Csr, features: Tensor) -> Result<Self> {
        adjacency.validate()?;
        if adjacency.n_rows() != adjacency.n_cols() {
            return Err(Error::Consistency(format!(
                "adjacency must be square, got {}x{}",
                adjacency.n_rows(),
                adjacency.n_cols()
            )));
        }
        if features.rows() != adjacency.n_rows() {
            return Err(Error::Consistency(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                adjacency.n_rows()
            )));
        }
        Ok(Self {
            adjacency,
            features,
            labels: None,
            graph_label: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Consistency(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: Option<usize>) -> Self {
        self.graph_label = label;
        self
    }

    /// Number of nodes `N`.
    pub fn n(&self) -> usize {
        self.adjacency.n_rows()
    }

    /// Number of stored arcs `M` (an undirected edge counts twice).
    pub fn m(&self) -> usize {
        self.adjacency.nnz()
    }

    /// Feature width `F`.
    pub fn f(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn set_features(&mut self, features: Tensor) -> Result<()> {
        if features.rows() != self.n() {
            return Err(Error::Consistency(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.n()
            )));
        }
        self.features = features;
        Ok(())
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Consistency("not a permutation of the node set".into()));
        }
        let adjacency = Csr::from_triplets(
            n,
            n,
            self.adjacency.iter().map(|(r, c, w)| (perm[r], perm[c], w)),
        )?;
        let mut features = Tensor::zeros(n, self.f());
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![None; n];
            for i in 0..n {
                out[perm[i]] = l[i];
            }
            out
        });
        Ok(Self {
            adjacency,
            features,
            labels,
            graph_label: self.graph_label,
        })
    }
}

/// Kipf-style renormalization `D^-1/2 (A + I) D^-1/2`.
///
/// Degrees are row sums of `|A + I|`, so weighted inputs with negative
/// entries still produce a well-defined scaling. Output is symmetric
/// whenever the input is.
pub fn normalize_adjacency(adj: &Csr) -> Csr {
    let n = adj.n_rows();
    let with_loops = Csr::from_triplets(
        n,
        n,
        adj.iter().chain((0..n).map(|i| (i, i, 1.0))),
    )
    .expect("indices come from a valid matrix");
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|r| {
            let d: f64 = with_loops.row(r).1.iter().map(|w| w.abs()).sum();
            1.0 / d.sqrt()
        })
        .collect();
    Csr::from_triplets(
        n,
        n,
        with_loops
            .iter()
            .map(|(r, c, w)| (r, c, inv_sqrt[r] * w * inv_sqrt[c])),
    )
    .expect("indices come from a valid matrix")
}

/// Local degree profile: own degree, then min, max, mean and population
/// standard deviation of the neighbours' degrees. Self-loops are ignored.
pub fn degree_profile_features(adj: &Csr) -> Tensor {
    let n = adj.n_rows();
    let neighbours = |i: usize| adj.row(i).0.iter().copied().filter(move |&j| j != i);
    let degree: Vec<f64> = (0..n).map(|i| neighbours(i).count() as f64).collect();
    let mut out = Tensor::zeros(n, 5);
    for i in 0..n {
        let nd: Vec<f64> = neighbours(i).map(|j| degree[j]).collect();
        if nd.is_empty() {
            continue;
        }
        let k = nd.len() as f64;
        let mean = nd.iter().sum::<f64>() / k;
        let var = nd.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / k;
        let min = nd.iter().copied().fold(f64::INFINITY, f64::min);
        let max = nd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.row_mut(i)
            .copy_from_slice(&[degree[i], min, max, mean, var.sqrt()]);
    }
    out
}

/// Several graphs merged into one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    graphs: Vec<Graph>,
    graph_ids: Vec<usize>,
    merged: Graph,
}

impl GraphBatch {
    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    /// Source graph index of every node, non-decreasing.
    pub fn graph_ids(&self) -> &[usize] {
        &self.graph_ids
    }

    pub fn n_graphs(&self) -> usize {
        self.graphs.len()
    }

    /// The block-diagonal graph (adjacency and stacked features).
    pub fn merged(&self) -> &Graph {
        &self.merged
    }

    /// Per-graph labels, where present.
    pub fn graph_labels(&self) -> Vec<Option<usize>> {
        self.graphs.iter().map(Graph::graph_label).collect()
    }
}

pub fn batch_graphs(graphs: Vec<Graph>) -> Result<GraphBatch> {
    let Some(first) = graphs.first() else {
        return Err(Error::Consistency("cannot batch an empty graph list".into()));
    };
    let f = first.f();
    if let Some((i, g)) = graphs.iter().enumerate().find(|(_, g)| g.f() != f) {
        return Err(Error::Consistency(format!(
            "graph {i} has feature width {} but graph 0 has {f}",
            g.f()
        )));
    }
    let blocks: Vec<&Csr> = graphs.iter().map(Graph::adjacency).collect();
    let adjacency = Csr::block_diag(&blocks);
    let n = adjacency.n_rows();
    let mut data = Vec::with_capacity(n * f);
    let mut graph_ids = Vec::with_capacity(n);
    for (gi, g) in graphs.iter().enumerate() {
        data.extend_from_slice(g.features().data());
        graph_ids.extend(std::iter::repeat_n(gi, g.n()));
    }
    let merged = Graph::new(adjacency, Tensor::from_vec(n, f, data)?)?;
    Ok(GraphBatch {
        graphs,
        graph_ids,
        merged,
    })
}
