use super::context::ContextTable;
use crate::error::{contract_err, G5Error, Result};
use crate::graph::GraphDataset;

/// One linkless subgraph: a target node followed by its context, most
/// intimate first. Position 0 is the target.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphRecord {
    pub nodes: Vec<usize>,
    /// Intimacy of each context node (positions 1..).
    pub intimacy: Vec<f64>,
    pub wl: Vec<usize>,
    pub hops: Vec<usize>,
}

impl SubgraphRecord {
    pub fn target(&self) -> usize {
        self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn context_len(&self) -> usize {
        self.nodes.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphBatch {
    pub graph_id: String,
    pub k: usize,
    pub records: Vec<SubgraphRecord>,
}

impl SubgraphBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, v: usize) -> &SubgraphRecord {
        &self.records[v]
    }

    pub fn select(&self, targets: &[usize]) -> Vec<&SubgraphRecord> {
        targets.iter().map(|&v| &self.records[v]).collect()
    }
}

/// Intermediate results that a batch is assembled from.
#[derive(Clone, Debug, Default)]
pub struct PreprocessArtifacts {
    pub contexts: Option<ContextTable>,
    pub wl: Option<Vec<usize>>,
    /// Hop distance from each node to each of its context nodes, in context order.
    pub hops: Option<Vec<Vec<usize>>>,
}

fn missing(what: &str) -> G5Error {
    G5Error::PipelineOrder(format!("{what} must be computed before building subgraph batches"))
}

pub fn build_subgraph_batch(
    dataset: &GraphDataset,
    artifacts: &PreprocessArtifacts,
    k: usize,
) -> Result<SubgraphBatch> {
    let contexts = artifacts.contexts.as_ref().ok_or_else(|| missing("contexts"))?;
    let wl = artifacts.wl.as_ref().ok_or_else(|| missing("WL codes"))?;
    let hops = artifacts.hops.as_ref().ok_or_else(|| missing("hop distances"))?;
    let n = dataset.num_nodes();
    if contexts.num_nodes() != n || wl.len() != n || hops.len() != n {
        return Err(G5Error::PipelineOrder(format!(
            "artifacts were computed for a different graph than '{}'",
            dataset.id()
        )));
    }
    if k == 0 {
        return contract_err("context size k must be at least 1");
    }
    if k > contexts.k() {
        return Err(G5Error::PipelineOrder(format!(
            "contexts were ranked to k={} but k={k} was requested",
            contexts.k()
        )));
    }
    let records = (0..n)
        .map(|v| {
            let ctx = &contexts.context(v)[..contexts.context(v).len().min(k)];
            let mut nodes = Vec::with_capacity(ctx.len() + 1);
            nodes.push(v);
            nodes.extend(ctx.iter().map(|c| c.0));
            let mut h = Vec::with_capacity(nodes.len());
            h.push(0);
            h.extend_from_slice(&hops[v][..ctx.len()]);
            SubgraphRecord {
                wl: nodes.iter().map(|&u| wl[u]).collect(),
                intimacy: ctx.iter().map(|c| c.1).collect(),
                hops: h,
                nodes,
            }
        })
        .collect();
    Ok(SubgraphBatch {
        graph_id: dataset.id().to_string(),
        k,
        records,
    })
}
