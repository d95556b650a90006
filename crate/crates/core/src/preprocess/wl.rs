use std::collections::BTreeMap;

use crate::error::{contract_err, Result};
use crate::graph::GraphDataset;

pub const DEFAULT_WL_ITERATIONS: usize = 2;

/// 1-WL colour refinement starting from node degree.
///
/// Each round's signatures are sorted before being numbered, so codes depend
/// only on structure: isomorphic graphs receive identical code multisets and
/// automorphic nodes share a code.
pub fn wl_refine(dataset: &GraphDataset, iterations: usize) -> Result<Vec<usize>> {
    if iterations == 0 {
        return contract_err("WL refinement needs at least one iteration");
    }
    let n = dataset.num_nodes();
    let mut colors = compress((0..n).map(|v| (dataset.degree(v), Vec::new())).collect());
    for _ in 0..iterations {
        let sigs = (0..n)
            .map(|v| {
                let mut nb: Vec<usize> = dataset.neighbors(v).iter().map(|&u| colors[u]).collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        colors = compress(sigs);
    }
    Ok(colors)
}

fn compress(sigs: Vec<(usize, Vec<usize>)>) -> Vec<usize> {
    let mut table: BTreeMap<&(usize, Vec<usize>), usize> = sigs.iter().map(|s| (s, 0)).collect();
    for (i, code) in table.values_mut().enumerate() {
        *code = i;
    }
    sigs.iter().map(|s| table[s]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn graph(n: usize, edges: &[(usize, usize)]) -> GraphDataset {
        GraphDataset::new(
            "w",
            (0..n).map(|i| i.to_string()).collect(),
            Tensor::zeros(&[n, 1]),
            vec![None; n],
            vec![],
            edges.iter().copied(),
        )
        .unwrap()
    }

    #[test]
    fn triangle_one_code() {
        let c = wl_refine(&graph(3, &[(0, 1), (1, 2), (2, 0)]), 2).unwrap();
        assert!(c.iter().all(|&x| x == c[0]));
    }

    #[test]
    fn path_ends_match() {
        let c = wl_refine(&graph(3, &[(0, 1), (1, 2)]), 2).unwrap();
        assert_eq!(c[0], c[2]);
        assert_ne!(c[0], c[1]);
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(wl_refine(&graph(2, &[(0, 1)]), 0).is_err());
    }
}
