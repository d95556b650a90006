use std::collections::BTreeMap;

use rand::Rng;

use super::Task;
use crate::error::{contract_err, G5Error, Result};
use crate::graph::{GraphDataset, SplitName};
use crate::io::MetricRecord;
use crate::model::{classify, encode, link_logits, predict_proba, reconstruct, representations, Mode, ModelState};
use crate::preprocess::SubgraphBatch;
use crate::tensor::{argmax, derived_rng, Adam, AdamConfig, Tape, Tensor};

/// A preprocessed graph ready for training.
#[derive(Clone, Copy)]
pub struct GraphInput<'a> {
    pub dataset: &'a GraphDataset,
    pub batch: &'a SubgraphBatch,
    /// Nodes whose labels supervise classification; the training split when `None`.
    pub labelled: Option<&'a [usize]>,
}

impl<'a> GraphInput<'a> {
    pub fn new(dataset: &'a GraphDataset, batch: &'a SubgraphBatch) -> Self {
        GraphInput {
            dataset,
            batch,
            labelled: None,
        }
    }

    pub fn id(&self) -> &str {
        self.dataset.id()
    }
}

/// Optimiser state, metric log and epoch counters shared by all segments of a run.
pub struct Trainer {
    pub run_id: String,
    pub seed: u64,
    /// Subgraphs per forward pass; gradients are accumulated across chunks
    /// so every epoch is one full-batch step.
    pub chunk: usize,
    pub adam: Adam,
    pub metrics: Vec<MetricRecord>,
    epochs: BTreeMap<(String, Task), usize>,
    trained: BTreeMap<String, Vec<String>>,
}

impl Trainer {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        Trainer {
            run_id: run_id.into(),
            seed,
            chunk: 256,
            adam: Adam::new(),
            metrics: Vec::new(),
            epochs: BTreeMap::new(),
            trained: BTreeMap::new(),
        }
    }

    /// Tasks each graph has been trained on, in first-seen order.
    pub fn trained_tasks(&self) -> &BTreeMap<String, Vec<String>> {
        &self.trained
    }

    pub fn record(&mut self, graph: &str, task: &str, epoch: usize, split: &str, metric: &str, value: f64) {
        self.metrics
            .push(MetricRecord::new(&self.run_id, graph, task, epoch, split, metric, value));
    }

    /// Train one task on one graph for `epochs` full-batch epochs and return
    /// the per-epoch loss.
    pub fn train_task(
        &mut self,
        state: &mut ModelState,
        input: &GraphInput,
        task: Task,
        epochs: usize,
        opt: &AdamConfig,
    ) -> Result<Vec<f64>> {
        opt.validate()?;
        let graph = input.id().to_string();
        state.graph(&graph)?;
        let work = TaskWork::prepare(input, task)?;
        let mut trace = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let key = (graph.clone(), task);
            let epoch = *self.epochs.get(&key).unwrap_or(&0);
            self.epochs.insert(key, epoch + 1);
            let loss = self.epoch(state, input, &work, epoch)?;
            if !loss.is_finite() {
                return Err(G5Error::Numeric(format!(
                    "non-finite {task} loss on graph '{graph}' at epoch {epoch}"
                )));
            }
            self.adam.step(&mut state.store, opt)?;
            self.record(&graph, task.as_str(), epoch, "train", "loss", loss);
            trace.push(loss);
        }
        let seen = self.trained.entry(graph).or_default();
        if !seen.iter().any(|t| t == task.as_str()) {
            seen.push(task.as_str().to_string());
        }
        Ok(trace)
    }

    fn epoch(&self, state: &mut ModelState, input: &GraphInput, work: &TaskWork, epoch: usize) -> Result<f64> {
        let graph = input.id();
        let tag = format!("{graph}/{}/{epoch}", work.task());
        let mut total = 0.0;
        match work {
            TaskWork::Reconstruct { nodes } | TaskWork::Classify { nodes, .. } => {
                let n = nodes.len() as f64;
                for (c, part) in nodes.chunks(self.chunk.max(1)).enumerate() {
                    let mut rng = derived_rng(self.seed, &format!("dropout/{tag}/{c}"));
                    let mut tape = Tape::new();
                    let enc = encode(&mut tape, state, input.dataset, input.batch, part, &mut Mode::Train(&mut rng))?;
                    let loss = match work {
                        TaskWork::Reconstruct { .. } => {
                            let est = reconstruct(&mut tape, state, graph, enc.z)?;
                            tape.mse(est, feature_rows(input.dataset, part))?
                        }
                        TaskWork::Classify { labels, .. } => {
                            let probs = classify(&mut tape, state, graph, enc.z)?;
                            let t = part.iter().map(|&v| labels[&v]).collect();
                            tape.cross_entropy(probs, t)?
                        }
                        TaskWork::Structure { .. } => unreachable!(),
                    };
                    let w = part.len() as f64 / n;
                    total += w * tape.value(loss).item()?;
                    let scaled = tape.scale(loss, w);
                    tape.backward(scaled, &mut state.store)?;
                }
            }
            TaskWork::Structure { positives } => {
                // Each endpoint is encoded once. The pair loss and its gradient
                // with respect to the representations come from a small second
                // tape, and each chunk is then replayed with the same dropout
                // stream to push that gradient into the parameters.
                let mut rng = derived_rng(self.seed, &format!("negatives/{tag}"));
                let pairs = with_negatives(input.dataset, positives, &mut rng);
                let mut nodes: Vec<usize> = pairs.iter().flat_map(|p| [p.0, p.1]).collect();
                nodes.sort_unstable();
                nodes.dedup();
                let d = state.config.hidden;
                let chunks: Vec<&[usize]> = nodes.chunks(self.chunk.max(1)).collect();
                let mut z = Vec::with_capacity(nodes.len() * d);
                for (c, part) in chunks.iter().enumerate() {
                    let mut rng = derived_rng(self.seed, &format!("dropout/{tag}/{c}"));
                    let mut tape = Tape::new();
                    let enc = encode(&mut tape, state, input.dataset, input.batch, part, &mut Mode::Train(&mut rng))?;
                    z.extend_from_slice(tape.value(enc.z).data());
                }
                let at = |v: usize| nodes.binary_search(&v).ok();
                let mut head = Tape::new();
                let zs = head.input(Tensor::new(vec![nodes.len(), d], z)?);
                let zu = head.gather_rows(zs, pairs.iter().map(|p| at(p.0)).collect())?;
                let zv = head.gather_rows(zs, pairs.iter().map(|p| at(p.1)).collect())?;
                let logits = link_logits(&mut head, zu, zv)?;
                let loss = head.bce_with_logits(logits, pairs.iter().map(|p| p.2).collect())?;
                total = head.value(loss).item()?;
                let adj = head.backward_with_inputs(loss, &mut state.store)?;
                let dz = adj[zs.index()].clone().unwrap_or_else(|| vec![0.0; nodes.len() * d]);
                let mut offset = 0;
                for (c, part) in chunks.iter().enumerate() {
                    let mut rng = derived_rng(self.seed, &format!("dropout/{tag}/{c}"));
                    let mut tape = Tape::new();
                    let enc = encode(&mut tape, state, input.dataset, input.batch, part, &mut Mode::Train(&mut rng))?;
                    let len = part.len() * d;
                    let seed = tape.constant(Tensor::new(vec![part.len(), d], dz[offset..offset + len].to_vec())?);
                    offset += len;
                    let weighted = tape.mul(enc.z, seed)?;
                    let surrogate = tape.sum(weighted);
                    tape.backward(surrogate, &mut state.store)?;
                }
            }
        }
        Ok(total)
    }
}

enum TaskWork {
    Reconstruct { nodes: Vec<usize> },
    Structure { positives: Vec<(usize, usize)> },
    Classify { nodes: Vec<usize>, labels: BTreeMap<usize, usize> },
}

impl TaskWork {
    fn task(&self) -> Task {
        match self {
            TaskWork::Reconstruct { .. } => Task::Reconstruct,
            TaskWork::Structure { .. } => Task::Structure,
            TaskWork::Classify { .. } => Task::Classify,
        }
    }

    fn prepare(input: &GraphInput, task: Task) -> Result<Self> {
        let ds = input.dataset;
        match task {
            Task::Reconstruct => Ok(TaskWork::Reconstruct {
                nodes: (0..ds.num_nodes()).collect(),
            }),
            Task::Structure => {
                if ds.num_edges() == 0 {
                    return contract_err(format!("graph '{}' has no links to recover", ds.id()));
                }
                Ok(TaskWork::Structure {
                    positives: ds.edges().to_vec(),
                })
            }
            Task::Classify => {
                let nodes: Vec<usize> = match input.labelled {
                    Some(l) => l.to_vec(),
                    None => ds.splits().train.clone(),
                };
                if nodes.is_empty() {
                    return contract_err(format!(
                        "graph '{}' has no labelled training nodes; use apocalypse mode for zero-label graphs",
                        ds.id()
                    ));
                }
                let all = ds.labels()?;
                let mut labels = BTreeMap::new();
                for &v in &nodes {
                    let y = all.get(v).copied().flatten().ok_or_else(|| {
                        G5Error::Contract(format!("node {v} of graph '{}' has no label", ds.id()))
                    })?;
                    labels.insert(v, y);
                }
                Ok(TaskWork::Classify { nodes, labels })
            }
        }
    }
}

fn feature_rows(ds: &GraphDataset, nodes: &[usize]) -> Tensor {
    let d = ds.feature_dim();
    let mut out = Vec::with_capacity(nodes.len() * d);
    for &v in nodes {
        out.extend_from_slice(ds.features().row(v));
    }
    Tensor::new(vec![nodes.len(), d], out).expect("row-aligned features")
}

/// Each link labelled 1, followed by one uniformly drawn non-link per link labelled 0.
pub fn with_negatives<R: Rng>(ds: &GraphDataset, positives: &[(usize, usize)], rng: &mut R) -> Vec<(usize, usize, f64)> {
    let n = ds.num_nodes();
    let mut out: Vec<(usize, usize, f64)> = positives.iter().map(|&(u, v)| (u, v, 1.0)).collect();
    if n < 2 {
        return out;
    }
    for _ in 0..positives.len() {
        for _ in 0..1000 {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b && !ds.has_edge(a, b) {
                out.push((a, b, 0.0));
                break;
            }
        }
    }
    out
}

/// Fraction of `split` nodes whose most probable class is the true label.
/// Ties resolve to the lowest class index. Reads labels through the
/// evaluation path, which stays open when labels are sealed.
pub fn evaluate_accuracy(state: &ModelState, input: &GraphInput, split: SplitName, chunk: usize) -> Result<f64> {
    let ds = input.dataset;
    let nodes = ds.split(split);
    if nodes.is_empty() {
        return contract_err(format!("split '{}' of graph '{}' is empty", split.as_str(), ds.id()));
    }
    let z = representations(state, ds, input.batch, chunk)?;
    let probs = predict_proba(state, ds.id(), &z)?;
    accuracy(&probs, ds.labels_for_evaluation(), &nodes)
}

pub fn accuracy(probs: &Tensor, labels: &[Option<usize>], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return contract_err("accuracy over an empty node set");
    }
    let mut hits = 0usize;
    for &v in nodes {
        let y = labels
            .get(v)
            .copied()
            .flatten()
            .ok_or_else(|| G5Error::Contract(format!("node {v} has no label to evaluate against")))?;
        if argmax(probs.row(v)) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / nodes.len() as f64)
}
