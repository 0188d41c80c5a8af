use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 5% train, 15% validation, 80% test.
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.05, 0.15, 0.80);

/// Disjoint train/validation/test node index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Checks pairwise disjointness and the `< n` bound.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Range {
                    id: i,
                    n,
                    context: Some("split".into()),
                });
            }
            if std::mem::replace(&mut owner[i], true) {
                return Err(Error::Consistency(format!(
                    "node {i} appears in more than one split part"
                )));
            }
        }
        Ok(())
    }
}

fn check_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if tr + va + te > 1.0 + 1e-9 {
        return Err(Error::Config(format!("split ratios sum above 1: {ratios:?}")));
    }
    Ok(())
}

/// Uniformly random partition of `0..n`, deterministic per seed.
pub fn make_splits(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    check_ratios(ratios)?;
    let (tr, va, te) = ratios;
    let n_train = (n as f64 * tr).round() as usize;
    let n_val = (n as f64 * va).round() as usize;
    let n_test = ((n as f64 * te).round() as usize).min(n.saturating_sub(n_train + n_val));
    if n_train == 0 || n_val == 0 || n_test == 0 || n_train + n_val > n {
        return Err(Error::Config(format!(
            "split of {n} nodes with ratios {ratios:?} leaves a part empty"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = perm.into_iter();
    let train = rest.by_ref().take(n_train).collect();
    let val = rest.by_ref().take(n_val).collect();
    let test = rest.take(n_test).collect();
    Ok(Split { train, val, test })
}

/// Random partition drawn class by class, so every class gets at least one
/// train, validation and test node. Unlabeled nodes are left out.
pub fn make_stratified_splits(labels: &[Option<usize>], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    check_ratios(ratios)?;
    let (tr, va, te) = ratios;
    let classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, y) in labels.iter().enumerate() {
        if let Some(c) = y {
            by_class[*c].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut members) in by_class.into_iter().enumerate() {
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n < 3 {
            return Err(Error::Config(format!(
                "class {c} has {n} nodes; stratified splits need at least 3"
            )));
        }
        let n_train = ((n as f64 * tr).round() as usize).max(1);
        let n_val = ((n as f64 * va).round() as usize).max(1).min(n - n_train - 1);
        let n_test = ((n as f64 * te).round() as usize).clamp(1, n - n_train - n_val);
        members.shuffle(&mut rng);
        let mut rest = members.into_iter();
        split.train.extend(rest.by_ref().take(n_train));
        split.val.extend(rest.by_ref().take(n_val));
        split.test.extend(rest.take(n_test));
    }
    if split.train.is_empty() {
        return Err(Error::Config("stratified split needs labeled nodes".into()));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stratified_covers_every_class() {
        let labels: Vec<Option<usize>> = (0..150).map(|i| Some(i / 50)).collect();
        for seed in 0..20 {
            let s = make_stratified_splits(&labels, DEFAULT_SPLIT_RATIOS, seed).unwrap();
            s.validate(150).unwrap();
            // per class: round(2.5) = 3 train, round(7.5) = 8 val, the 39 left for test
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), (9, 24, 117));
            for c in 0..3 {
                assert!(s.train.iter().any(|&i| i / 50 == c));
            }
        }
        let mut sparse = labels.clone();
        sparse[0] = None;
        let s = make_stratified_splits(&sparse, DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert!(!s.train.iter().chain(&s.val).chain(&s.test).any(|&i| i == 0));
        assert!(make_stratified_splits(&[Some(0), Some(0), Some(1)], DEFAULT_SPLIT_RATIOS, 0).is_err());
    }

    #[test]
    fn default_sizes_on_100() {
        let s = make_splits(100, DEFAULT_SPLIT_RATIOS, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 15, 80));
        s.validate(100).unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            make_splits(50, DEFAULT_SPLIT_RATIOS, 3).unwrap(),
            make_splits(50, DEFAULT_SPLIT_RATIOS, 3).unwrap()
        );
        assert_ne!(
            make_splits(500, DEFAULT_SPLIT_RATIOS, 3).unwrap(),
            make_splits(500, DEFAULT_SPLIT_RATIOS, 4).unwrap()
        );
    }

    #[test]
    fn rejects_empty_parts_and_bad_ratios() {
        assert!(matches!(make_splits(5, DEFAULT_SPLIT_RATIOS, 0), Err(Error::Config(_))));
        assert!(make_splits(100, (0.5, 0.5, 0.5), 0).is_err());
        assert!(make_splits(100, (0.0, 0.5, 0.5), 0).is_err());
    }

    #[test]
    fn disjoint_for_100_seeds() {
        for seed in 0..100 {
            let s = make_splits(200, DEFAULT_SPLIT_RATIOS, seed).unwrap();
            s.validate(200).unwrap();
        }
    }

    proptest! {
        #[test]
        fn parts_disjoint_and_sized(n in 40usize..400, seed in any::<u64>()) {
            let s = make_splits(n, DEFAULT_SPLIT_RATIOS, seed).unwrap();
            prop_assert!(s.validate(n).is_ok());
            prop_assert!(s.train.len() + s.val.len() + s.test.len() <= n);
            prop_assert!((s.train.len() as f64 - 0.05 * n as f64).abs() <= 0.5 + 1e-9);
        }
    }
}
