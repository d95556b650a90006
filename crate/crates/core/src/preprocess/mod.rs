//! Structural precomputation: intimacy-ranked contexts, WL role codes and hop
//! distances, assembled into one linkless subgraph per node.

mod batch;
pub mod cache;
mod context;
mod hop;
mod intimacy;
mod wl;

use serde::{Deserialize, Serialize};

pub use batch::{build_subgraph_batch, PreprocessArtifacts, SubgraphBatch, SubgraphRecord};
pub use context::{context_table, context_table_push, top_k_context, ContextTable};
pub use hop::{hop_distances, hops_from, DEFAULT_HOP_CAP};
pub use intimacy::{
    compute_intimacy, compute_intimacy_with, intimacy_row_push, normalize_adjacency, IntimacyMatrix,
    IntimacyMethod, DEFAULT_ALPHA,
};
pub use wl::{wl_refine, DEFAULT_WL_ITERATIONS};

use crate::error::{G5Error, Result};
use crate::graph::GraphDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub alpha: f64,
    pub wl_iterations: usize,
    pub hop_cap: usize,
    /// Graphs with more nodes than this rank contexts by local push instead
    /// of a dense intimacy matrix.
    pub dense_limit: usize,
    pub push_tolerance: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            alpha: DEFAULT_ALPHA,
            wl_iterations: DEFAULT_WL_ITERATIONS,
            hop_cap: DEFAULT_HOP_CAP,
            dense_limit: 5000,
            push_tolerance: 1e-4,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(G5Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.wl_iterations == 0 || self.hop_cap == 0 {
            return Err(G5Error::Config("wl_iterations and hop_cap must be positive".into()));
        }
        if !(self.push_tolerance > 0.0) {
            return Err(G5Error::Config("push_tolerance must be positive".into()));
        }
        Ok(())
    }
}

pub fn compute_artifacts(dataset: &GraphDataset, k: usize, cfg: &PreprocessConfig) -> Result<PreprocessArtifacts> {
    cfg.validate()?;
    let contexts = if dataset.num_nodes() <= cfg.dense_limit {
        context_table(&compute_intimacy(dataset, cfg.alpha)?, k)?
    } else {
        context_table_push(dataset, cfg.alpha, k, cfg.push_tolerance)?
    };
    let n = dataset.num_nodes();
    let targets: Vec<usize> = (0..n).collect();
    let ctx_ids: Vec<Vec<usize>> = (0..n).map(|v| contexts.ids(v)).collect();
    let hops = hop_distances(dataset, &targets, &ctx_ids, cfg.hop_cap)?;
    Ok(PreprocessArtifacts {
        contexts: Some(contexts),
        wl: Some(wl_refine(dataset, cfg.wl_iterations)?),
        hops: Some(hops),
    })
}

/// Full preprocessing of one graph at context size `k`.
pub fn preprocess_graph(dataset: &GraphDataset, k: usize, cfg: &PreprocessConfig) -> Result<SubgraphBatch> {
    let artifacts = compute_artifacts(dataset, k, cfg)?;
    build_subgraph_batch(dataset, &artifacts, k)
}
