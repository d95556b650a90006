//! Planted-partition citation graphs with class-correlated bag-of-words
//! features, for demos and tests when the benchmark files are not at hand.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::GraphDataset;
use crate::error::{G5Error, Result};
use crate::tensor::{derived_rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub classes: usize,
    pub feature_dim: usize,
    /// Expected number of links per node.
    pub avg_degree: f64,
    /// Probability that a link stays inside the node's class.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub topic_purity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            nodes: 120,
            classes: 3,
            feature_dim: 60,
            avg_degree: 4.0,
            homophily: 0.85,
            words_per_node: 8,
            topic_purity: 0.7,
            seed: 0,
        }
    }
}

pub fn generate(id: &str, spec: &SyntheticSpec) -> Result<GraphDataset> {
    if spec.nodes == 0 || spec.classes == 0 || spec.feature_dim < spec.classes {
        return Err(G5Error::Config(format!("degenerate synthetic spec {spec:?}")));
    }
    let mut rng = derived_rng(spec.seed, &format!("synthetic/{id}"));
    let labels: Vec<usize> = (0..spec.nodes).map(|i| i % spec.classes).collect();
    let block = spec.feature_dim / spec.classes;

    let mut feats = vec![0.0; spec.nodes * spec.feature_dim];
    for (v, &c) in labels.iter().enumerate() {
        for _ in 0..spec.words_per_node {
            let j = if rng.gen_bool(spec.topic_purity) {
                c * block + rng.gen_range(0..block)
            } else {
                rng.gen_range(0..spec.feature_dim)
            };
            feats[v * spec.feature_dim + j] = 1.0;
        }
    }

    let by_class: Vec<Vec<usize>> = (0..spec.classes)
        .map(|c| (0..spec.nodes).filter(|&v| labels[v] == c).collect())
        .collect();
    let per_node = (spec.avg_degree / 2.0).max(0.0);
    let mut edges = Vec::new();
    for v in 0..spec.nodes {
        let mut count = per_node.floor() as usize;
        if rng.gen_bool(per_node.fract()) {
            count += 1;
        }
        for _ in 0..count {
            let u = if rng.gen_bool(spec.homophily) {
                let peers = &by_class[labels[v]];
                peers[rng.gen_range(0..peers.len())]
            } else {
                rng.gen_range(0..spec.nodes)
            };
            edges.push((v, u));
        }
    }

    GraphDataset::new(
        id,
        (0..spec.nodes).map(|i| format!("{id}{i}")).collect(),
        Tensor::new(vec![spec.nodes, spec.feature_dim], feats)?,
        labels.into_iter().map(Some).collect(),
        (0..spec.classes).map(|c| format!("class{c}")).collect(),
        edges,
    )
}

/// Write a dataset in the raw citation format read by
/// [`load_citation_graph`](super::load_citation_graph).
pub fn write_citation_files(ds: &GraphDataset, content: &Path, cites: &Path) -> Result<()> {
    let labels = ds.labels_for_evaluation();
    let mut out = String::new();
    for v in 0..ds.num_nodes() {
        out.push_str(&ds.node_ids()[v]);
        for x in ds.features().row(v) {
            write!(out, "\t{x}").expect("string write");
        }
        let label = labels[v].map_or("unknown", |c| ds.class_names()[c].as_str());
        writeln!(out, "\t{label}").expect("string write");
    }
    fs::write(content, out).map_err(|e| G5Error::io(content, e))?;
    let mut out = String::new();
    for &(u, v) in ds.edges() {
        writeln!(out, "{}\t{}", ds.node_ids()[u], ds.node_ids()[v]).expect("string write");
    }
    fs::write(cites, out).map_err(|e| G5Error::io(cites, e))
}
