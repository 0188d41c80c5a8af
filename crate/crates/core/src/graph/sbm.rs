use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::sparse::Csr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmConfig {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Standard deviation of the Gaussian noise added to one-hot features.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            block_sizes: vec![50, 50, 50],
            p_in: 0.1,
            p_out: 0.01,
            feature_noise: 0.5,
            seed: 0,
        }
    }
}

/// Undirected stochastic block model with one-hot-plus-noise features and
/// block ids as labels.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    if cfg.block_sizes.is_empty() || cfg.block_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "every SBM block must be non-empty, got {:?}",
            cfg.block_sizes
        )));
    }
    if !(0.0 <= cfg.p_out && cfg.p_out < cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::Config(format!(
            "SBM needs 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
            cfg.p_in, cfg.p_out
        )));
    }
    let noise = Normal::new(0.0, cfg.feature_noise)
        .map_err(|e| Error::Config(format!("feature noise {}: {e}", cfg.feature_noise)))?;

    let block: Vec<usize> = cfg
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = block.len();
    let k = cfg.block_sizes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut arcs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block[i] == block[j] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                arcs.push((i, j));
                arcs.push((j, i));
            }
        }
    }
    let adjacency = Csr::from_arcs(n, arcs)?;

    let mut features = Tensor::zeros(n, k);
    for i in 0..n {
        let row = features.row_mut(i);
        row[block[i]] = 1.0;
        for v in row.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Graph::new(adjacency, features)?.with_labels(block.into_iter().map(Some).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_limit_gives_cliques() {
        let g = generate_sbm(&SbmConfig {
            block_sizes: vec![2, 2],
            p_in: 1.0,
            p_out: 0.0,
            feature_noise: 0.0,
            seed: 1,
        })
        .unwrap();
        let dense = g.adjacency().to_dense();
        let want = Tensor::from_rows(&[
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
        ]);
        assert_eq!(dense, want);
        assert_eq!(g.features().row(2), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_probabilities_and_empty_blocks() {
        let mut cfg = SbmConfig {
            p_in: 0.2,
            p_out: 0.2,
            ..SbmConfig::default()
        };
        assert!(matches!(generate_sbm(&cfg), Err(Error::Config(_))));
        cfg.p_out = 0.01;
        cfg.block_sizes = vec![3, 0];
        assert!(matches!(generate_sbm(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn within_block_density_census() {
        let cfg = SbmConfig {
            seed: 11,
            ..SbmConfig::default()
        };
        let g = generate_sbm(&cfg).unwrap();
        let labels = g.labels().unwrap();
        let (mut within, mut across) = (0usize, 0usize);
        for (r, c, _) in g.adjacency().iter() {
            if r < c {
                if labels[r] == labels[c] {
                    within += 1;
                } else {
                    across += 1;
                }
            }
        }
        let within_pairs = 3 * 50 * 49 / 2;
        let across_pairs = 3 * 50 * 50;
        let d_in = within as f64 / within_pairs as f64;
        let d_out = across as f64 / across_pairs as f64;
        assert!((d_in - 0.1).abs() <= 0.03, "within density {d_in}");
        assert!((d_out - 0.01).abs() <= 0.01, "across density {d_out}");
        assert!(g.adjacency().is_symmetric(0.0));
    }
}
