use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use crate::error::{G5Error, Result};
use crate::tensor::{SparseRows, Tensor};

/// Named node-index lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
            SplitName::All => "all",
        }
    }
}

/// Guards label reads. Once sealed, only the final evaluation path may look
/// at labels; every other read is an error.
#[derive(Debug, Default)]
struct LabelGuard {
    sealed: AtomicBool,
    reads: AtomicUsize,
    eval_reads: AtomicUsize,
}

impl Clone for LabelGuard {
    fn clone(&self) -> Self {
        LabelGuard {
            sealed: AtomicBool::new(self.sealed.load(Ordering::SeqCst)),
            reads: AtomicUsize::new(self.reads.load(Ordering::SeqCst)),
            eval_reads: AtomicUsize::new(self.eval_reads.load(Ordering::SeqCst)),
        }
    }
}

/// One simple undirected graph with node features, optional labels and splits.
#[derive(Clone, Debug)]
pub struct GraphDataset {
    id: String,
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    features: Tensor,
    sparse_features: SparseRows,
    labels: Vec<Option<usize>>,
    class_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    splits: Splits,
    /// Every link carries this weight.
    edge_weight: f64,
    dropped_edges: usize,
    guard: LabelGuard,
}

impl GraphDataset {
    /// Build a dataset, dropping self-loops and duplicate edges and symmetrising.
    pub fn new(
        id: impl Into<String>,
        node_ids: Vec<String>,
        features: Tensor,
        labels: Vec<Option<usize>>,
        class_names: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let id = id.into();
        let n = node_ids.len();
        let (fr, _) = features.dims2()?;
        if fr != n {
            return Err(G5Error::Shape(format!(
                "graph '{id}': {fr} feature rows for {n} nodes"
            )));
        }
        if labels.len() != n {
            return Err(G5Error::Shape(format!(
                "graph '{id}': {} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= class_names.len()) {
            return Err(G5Error::Contract(format!(
                "graph '{id}': label {bad} out of {} classes",
                class_names.len()
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, name) in node_ids.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(G5Error::Contract(format!(
                    "graph '{id}': duplicate node id '{name}'"
                )));
            }
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(G5Error::Contract(format!(
                    "graph '{id}': edge ({u}, {v}) out of {n} nodes"
                )));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        neighbors.iter_mut().for_each(|nb| nb.sort_unstable());
        let sparse_features = SparseRows::from_dense(&features);
        Ok(GraphDataset {
            id,
            node_ids,
            index,
            features,
            sparse_features,
            labels,
            class_names,
            edges,
            neighbors,
            splits: Splits::default(),
            edge_weight: 1.0,
            dropped_edges: 0,
            guard: LabelGuard::default(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Size of the label space. This is metadata, not a label read.
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn sparse_features(&self) -> &SparseRows {
        &self.sparse_features
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn edge_weight(&self) -> f64 {
        self.edge_weight
    }

    /// Citation links whose endpoints were not in the content file.
    pub fn dropped_edges(&self) -> usize {
        self.dropped_edges
    }

    pub(crate) fn set_dropped_edges(&mut self, n: usize) {
        self.dropped_edges = n;
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn split(&self, name: SplitName) -> Vec<usize> {
        match name {
            SplitName::Train => self.splits.train.clone(),
            SplitName::Val => self.splits.val.clone(),
            SplitName::Test => self.splits.test.clone(),
            SplitName::All => (0..self.num_nodes()).collect(),
        }
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= n {
                return Err(G5Error::Contract(format!(
                    "graph '{}': split index {i} out of {n} nodes",
                    self.id
                )));
            }
            if seen[i] {
                return Err(G5Error::Contract(format!(
                    "graph '{}': node {i} appears in more than one split",
                    self.id
                )));
            }
            seen[i] = true;
        }
        self.splits = splits;
        Ok(self)
    }

    /// Whether each node carries a label (says nothing about which class).
    pub fn labeled_mask(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    /// Label read for training and split construction. Fails once sealed.
    pub fn labels(&self) -> Result<&[Option<usize>]> {
        if self.guard.sealed.load(Ordering::SeqCst) {
            return Err(G5Error::LabelAccess(self.id.clone()));
        }
        self.guard.reads.fetch_add(1, Ordering::SeqCst);
        Ok(&self.labels)
    }

    /// Label read reserved for computing final accuracy; allowed when sealed.
    pub fn labels_for_evaluation(&self) -> &[Option<usize>] {
        self.guard.eval_reads.fetch_add(1, Ordering::SeqCst);
        &self.labels
    }

    pub fn seal_labels(&self) {
        self.guard.sealed.store(true, Ordering::SeqCst);
    }

    pub fn unseal_labels(&self) {
        self.guard.sealed.store(false, Ordering::SeqCst);
    }

    pub fn labels_sealed(&self) -> bool {
        self.guard.sealed.load(Ordering::SeqCst)
    }

    /// Number of successful non-evaluation label reads so far.
    pub fn label_reads(&self) -> usize {
        self.guard.reads.load(Ordering::SeqCst)
    }

    pub fn evaluation_label_reads(&self) -> usize {
        self.guard.eval_reads.load(Ordering::SeqCst)
    }

    /// Dense symmetric 0/1 adjacency. Meant for small graphs and checks.
    pub fn dense_adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut a = Tensor::zeros(&[n, n]);
        for &(u, v) in &self.edges {
            a.data_mut()[u * n + v] = self.edge_weight;
            a.data_mut()[v * n + u] = self.edge_weight;
        }
        a
    }
}

/// Ordered collection of graphs with unique ids.
#[derive(Clone, Debug, Default)]
pub struct MultiSourceSet {
    graphs: Vec<GraphDataset>,
}

impl MultiSourceSet {
    pub fn new(graphs: Vec<GraphDataset>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for g in &graphs {
            if !ids.insert(g.id().to_string()) {
                return Err(G5Error::Config(format!("duplicate graph id '{}'", g.id())));
            }
        }
        Ok(MultiSourceSet { graphs })
    }

    pub fn get(&self, id: &str) -> Option<&GraphDataset> {
        self.graphs.iter().find(|g| g.id() == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GraphDataset> {
        self.graphs.iter()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}
