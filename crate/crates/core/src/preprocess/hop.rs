use std::collections::VecDeque;

use crate::error::{contract_err, Result};
use crate::graph::GraphDataset;

pub const DEFAULT_HOP_CAP: usize = 20;

/// Shortest-path hop counts from `target` to each node of `others`, capped at
/// `cap`. Unreachable nodes get `cap`.
pub fn hops_from(dataset: &GraphDataset, target: usize, others: &[usize], cap: usize) -> Vec<usize> {
    let n = dataset.num_nodes();
    let mut wanted = vec![false; n];
    let mut remaining = 0;
    for &u in others {
        if !wanted[u] {
            wanted[u] = true;
            remaining += 1;
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[target] = 0;
    if wanted[target] {
        remaining -= 1;
    }
    let mut queue = VecDeque::from([target]);
    while remaining > 0 {
        let Some(u) = queue.pop_front() else { break };
        if dist[u] + 1 >= cap {
            break;
        }
        for &w in dataset.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                if wanted[w] {
                    remaining -= 1;
                }
                queue.push_back(w);
            }
        }
    }
    others.iter().map(|&u| dist[u].min(cap)).collect()
}

/// Hop distance from every target to each of its context nodes.
pub fn hop_distances(
    dataset: &GraphDataset,
    targets: &[usize],
    contexts: &[Vec<usize>],
    cap: usize,
) -> Result<Vec<Vec<usize>>> {
    if cap == 0 {
        return contract_err("hop cap must be at least 1");
    }
    if targets.len() != contexts.len() {
        return contract_err(format!(
            "{} targets but {} context lists",
            targets.len(),
            contexts.len()
        ));
    }
    Ok(targets
        .iter()
        .zip(contexts)
        .map(|(&t, ctx)| hops_from(dataset, t, ctx, cap))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn graph(n: usize, edges: &[(usize, usize)]) -> GraphDataset {
        GraphDataset::new(
            "h",
            (0..n).map(|i| i.to_string()).collect(),
            Tensor::zeros(&[n, 1]),
            vec![None; n],
            vec![],
            edges.iter().copied(),
        )
        .unwrap()
    }

    #[test]
    fn basic_hops() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3)]);
        let h = hop_distances(&g, &[0], &[vec![0, 1, 3, 4]], 20).unwrap();
        assert_eq!(h, vec![vec![0, 1, 3, 20]]);
    }

    #[test]
    fn cap_applies() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(hops_from(&g, 0, &[4, 2, 1], 2), vec![2, 2, 1]);
    }
}
