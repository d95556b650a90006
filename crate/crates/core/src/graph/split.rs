use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{GraphDataset, Splits};
use crate::error::{contract_err, G5Error, Result};
use crate::tensor::derived_rng;

/// How to carve train/validation/test node lists out of the labelled nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// `per_class` training nodes per class, then fixed-size validation and
    /// test sets, all drawn from one seeded permutation.
    Planetoid {
        per_class: usize,
        num_val: usize,
        num_test: usize,
    },
    /// Consecutive slices of a seeded permutation with the given fractions.
    Ratio { train: f64, val: f64, test: f64 },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::Planetoid {
            per_class: 20,
            num_val: 500,
            num_test: 1000,
        }
    }
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return contract_err(format!("{name} ratio {r} outside (0, 1]"));
    }
    Ok(())
}

/// Deterministic split for a fixed seed. Only labelled nodes are used.
pub fn make_split(dataset: GraphDataset, seed: u64, policy: &SplitPolicy) -> Result<GraphDataset> {
    let labels = dataset.labels()?.to_vec();
    let mut pool: Vec<usize> = (0..dataset.num_nodes())
        .filter(|&i| labels[i].is_some())
        .collect();
    pool.shuffle(&mut derived_rng(seed, &format!("split/{}", dataset.id())));

    let splits = match *policy {
        SplitPolicy::Planetoid {
            per_class,
            num_val,
            num_test,
        } => {
            let mut taken = vec![0usize; dataset.num_classes()];
            let mut train = Vec::new();
            let mut rest = Vec::new();
            for &v in &pool {
                let c = labels[v].expect("pool is labelled");
                if taken[c] < per_class {
                    taken[c] += 1;
                    train.push(v);
                } else {
                    rest.push(v);
                }
            }
            let val: Vec<usize> = rest.iter().copied().take(num_val).collect();
            let test: Vec<usize> = rest.iter().copied().skip(num_val).take(num_test).collect();
            Splits { train, val, test }
        }
        SplitPolicy::Ratio { train, val, test } => {
            check_ratio("train", train)?;
            check_ratio("validation", val)?;
            check_ratio("test", test)?;
            if train + val + test > 1.0 + 1e-12 {
                return contract_err(format!(
                    "split ratios sum to {} > 1",
                    train + val + test
                ));
            }
            let n = pool.len() as f64;
            let a = (train * n).floor() as usize;
            let b = a + (val * n).floor() as usize;
            let c = b + (test * n).floor() as usize;
            Splits {
                train: pool[..a].to_vec(),
                val: pool[a..b].to_vec(),
                test: pool[b..c.min(pool.len())].to_vec(),
            }
        }
    };
    dataset.with_splits(splits)
}

/// Prefix of a seeded permutation of the training split, of length
/// `floor(ratio * |train|)`. Sets for different ratios under one seed are nested.
pub fn sample_training_ratio(dataset: &GraphDataset, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    check_ratio("training", ratio)?;
    let mut train = dataset.splits().train.clone();
    if train.is_empty() {
        return Err(G5Error::Contract(format!(
            "graph '{}' has an empty training split",
            dataset.id()
        )));
    }
    train.shuffle(&mut derived_rng(seed, &format!("ratio/{}", dataset.id())));
    let len = (ratio * train.len() as f64).floor() as usize;
    train.truncate(len);
    Ok(train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn labelled(n: usize, classes: usize) -> GraphDataset {
        GraphDataset::new(
            "g",
            (0..n).map(|i| format!("n{i}")).collect(),
            Tensor::zeros(&[n, 1]),
            (0..n).map(|i| Some(i % classes)).collect(),
            (0..classes).map(|c| format!("c{c}")).collect(),
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_split() {
        let p = SplitPolicy::Planetoid {
            per_class: 3,
            num_val: 10,
            num_test: 20,
        };
        let a = make_split(labelled(60, 4), 7, &p).unwrap();
        let b = make_split(labelled(60, 4), 7, &p).unwrap();
        assert_eq!(a.splits(), b.splits());
        assert_eq!(a.splits().train.len(), 12);
        let c = make_split(labelled(60, 4), 8, &p).unwrap();
        assert_ne!(a.splits(), c.splits());
    }

    #[test]
    fn splits_disjoint() {
        let p = SplitPolicy::Ratio {
            train: 0.5,
            val: 0.2,
            test: 0.3,
        };
        let g = make_split(labelled(101, 3), 1, &p).unwrap();
        let s = g.splits();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), len);
        assert_eq!(s.train.len(), 50);
    }

    #[test]
    fn ratio_outside_unit_interval_rejected() {
        for bad in [0.0, -0.1, 1.5] {
            let p = SplitPolicy::Ratio {
                train: bad,
                val: 0.1,
                test: 0.1,
            };
            assert!(matches!(
                make_split(labelled(20, 2), 1, &p),
                Err(G5Error::Contract(_))
            ));
        }
    }

    #[test]
    fn training_ratio_floor_and_nesting() {
        let p = SplitPolicy::Planetoid {
            per_class: 20,
            num_val: 0,
            num_test: 0,
        };
        let g = make_split(labelled(400, 7), 3, &p).unwrap();
        assert_eq!(g.splits().train.len(), 140);
        assert_eq!(sample_training_ratio(&g, 0.05, 9).unwrap().len(), 7);
        let full = sample_training_ratio(&g, 1.0, 9).unwrap();
        let mut sorted = full.clone();
        sorted.sort_unstable();
        let mut train = g.splits().train.clone();
        train.sort_unstable();
        assert_eq!(sorted, train);

        let mut prev: Vec<usize> = Vec::new();
        for pct in (5..=50).step_by(5) {
            let s = sample_training_ratio(&g, pct as f64 / 100.0, 9).unwrap();
            assert!(s.len() >= prev.len());
            assert_eq!(&s[..prev.len()], &prev[..]);
            prev = s;
        }
    }

    #[test]
    fn empty_training_split_rejected() {
        let g = labelled(10, 2);
        assert!(matches!(
            sample_training_ratio(&g, 0.5, 1),
            Err(G5Error::Contract(_))
        ));
    }
}
