use std::cmp::Ordering;

use super::intimacy::{intimacy_row_push, IntimacyMatrix};
use crate::error::{contract_err, Result};
use crate::graph::GraphDataset;

/// Per-node ordered context: most intimate first, excluding the node itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTable {
    k: usize,
    contexts: Vec<Vec<(usize, f64)>>,
}

impl ContextTable {
    pub fn from_contexts(k: usize, contexts: Vec<Vec<(usize, f64)>>) -> Self {
        ContextTable { k, contexts }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_nodes(&self) -> usize {
        self.contexts.len()
    }

    pub fn context(&self, v: usize) -> &[(usize, f64)] {
        &self.contexts[v]
    }

    pub fn ids(&self, v: usize) -> Vec<usize> {
        self.contexts[v].iter().map(|&(u, _)| u).collect()
    }
}

// Scores are compared on a 1e-12 grid so that values equal up to rounding
// noise tie and fall back to ascending id.
fn intimacy_key(x: f64) -> i64 {
    (x * 1e12).round() as i64
}

fn ranking(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    intimacy_key(b.1)
        .cmp(&intimacy_key(a.1))
        .then(a.0.cmp(&b.0))
}

/// Top-`k` nodes by intimacy row `v`, skipping `v` and nodes with zero intimacy.
pub fn top_k_context(s: &IntimacyMatrix, v: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return contract_err("context size k must be at least 1");
    }
    let row = s.row(v);
    Ok(rank_row(
        row.iter().copied().enumerate().filter(|&(u, x)| u != v && x > 0.0),
        k,
    ))
}

fn rank_row(entries: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = entries.collect();
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, ranking);
        all.truncate(k);
    }
    all.sort_by(ranking);
    all
}

pub fn context_table(s: &IntimacyMatrix, k: usize) -> Result<ContextTable> {
    let contexts = (0..s.num_nodes())
        .map(|v| top_k_context(s, v, k))
        .collect::<Result<_>>()?;
    Ok(ContextTable { k, contexts })
}

/// Same ranking as [`context_table`], with each row obtained by local push
/// instead of a dense matrix.
pub fn context_table_push(dataset: &GraphDataset, alpha: f64, k: usize, tol: f64) -> Result<ContextTable> {
    if k == 0 {
        return contract_err("context size k must be at least 1");
    }
    let contexts = (0..dataset.num_nodes())
        .map(|v| {
            let row = intimacy_row_push(dataset, v, alpha, tol)?;
            Ok(rank_row(row.into_iter().filter(|&(u, _)| u != v), k))
        })
        .collect::<Result<_>>()?;
    Ok(ContextTable { k, contexts })
}
