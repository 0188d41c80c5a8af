//! The sparse high-order network against an all-pairs brute force of the
//! rule `a′ᵢⱼ = hᵢ·hⱼ if hᵢ·hⱼ > mean_k hᵢ·hₖ, else 0`.

use dsgrl::augment::build_high_order_network;
use dsgrl::autodiff::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `Some(weight)` for kept pairs.
fn brute_force(h: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    let n = h.len();
    let dot = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += a[k] * b[k];
        }
        s
    };
    let mut out = vec![vec![None; n]; n];
    for i in 0..n {
        let sims: Vec<f64> = (0..n).map(|j| dot(&h[i], &h[j])).collect();
        let mut total = 0.0;
        for s in &sims {
            total += s;
        }
        let mean = total / n as f64;
        for j in 0..n {
            if sims[j] > mean {
                out[i][j] = Some(sims[j]);
            }
        }
    }
    out
}

/// Half the draws use small integers so that exact ties with the row mean
/// occur; the rest are continuous.
fn random_h(rng: &mut impl Rng, k: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=20);
    let d = rng.random_range(1..=8);
    let integer = k.is_multiple_of(2);
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if integer {
                        f64::from(rng.random_range(-2i32..=2))
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect();
    if n > 1 && k.is_multiple_of(5) {
        rows[n - 1] = rows[0].clone();
    }
    rows
}

pub fn matches_brute_force_on_50_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ties_seen = 0;
    for k in 0..50 {
        let rows = random_h(&mut rng, k);
        let n = rows.len();
        let h = Tensor::from_rows(&rows);
        let expected = brute_force(&rows);
        let sparse = build_high_order_network(&h);

        let mut support = 0;
        for i in 0..n {
            for j in 0..n {
                let want = expected[i][j];
                let kept = sparse.row(i).0.contains(&j);
                assert_eq!(kept, want.is_some(), "support ({i},{j}) on H #{k}");
                assert_eq!(sparse.get(i, j), want.unwrap_or(0.0), "weight ({i},{j}) on H #{k}");
                support += usize::from(want.is_some());
            }
        }
        assert_eq!(sparse.nnz(), support, "no extra stored entries on H #{k}");

        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let dense = tape.thresholded_similarity(hv).unwrap();
        let dense = tape.value(dense);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dense.get(i, j), expected[i][j].unwrap_or(0.0));
            }
        }

        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        ties_seen += usize::from(rows.iter().any(|r| {
            let sims: Vec<f64> = rows.iter().map(|q| dot(r, q)).collect();
            let mean = sims.iter().sum::<f64>() / n as f64;
            sims.contains(&mean)
        }));
    }
    assert!(ties_seen > 0, "the draw should include exact ties with the row mean");
}

pub fn documented_example() {
    let h = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    let a = build_high_order_network(&h).to_dense();
    assert_eq!(a, Tensor::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 2.0]]));
}
