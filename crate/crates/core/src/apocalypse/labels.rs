use std::path::Path;

use crate::error::{G5Error, Result};
use crate::graph::GraphDataset;
use crate::io::write_atomic;
use crate::tensor::{argmax, Tensor};

pub const REASONED_HEADER: &str = "node_id,predicted_class,max_prob,entropy";

/// Per-node label distributions inferred without target labels.
#[derive(Clone, Debug)]
pub struct ReasonedLabels {
    /// `[nodes, classes]`, each row on the simplex.
    pub distributions: Tensor,
    pub labels: Vec<usize>,
    /// Reasoning loss after every epoch.
    pub loss_trace: Vec<f64>,
}

impl ReasonedLabels {
    pub fn from_distributions(distributions: Tensor, loss_trace: Vec<f64>) -> Result<Self> {
        distributions.dims2()?;
        let labels = assign_labels(&distributions);
        Ok(ReasonedLabels {
            distributions,
            labels,
            loss_trace,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.distributions.cols()
    }

    pub fn max_prob(&self, node: usize) -> f64 {
        self.distributions.row(node)[self.labels[node]]
    }

    /// Shannon entropy (nats) of one node's distribution.
    pub fn node_entropy(&self, node: usize) -> f64 {
        entropy(self.distributions.row(node))
    }

    /// Entropy (nats) of the histogram of hard labels; 0 when every node
    /// lands in one class.
    pub fn class_entropy(&self) -> f64 {
        let mut counts = vec![0.0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1.0;
        }
        let n = self.labels.len().max(1) as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        entropy(&counts)
    }

    /// Fraction of labelled nodes whose hard label matches.
    pub fn accuracy(&self, truth: &[Option<usize>]) -> Result<f64> {
        if truth.len() != self.labels.len() {
            return Err(G5Error::Shape(format!(
                "{} reasoned labels vs {} ground-truth entries",
                self.labels.len(),
                truth.len()
            )));
        }
        let (mut hit, mut total) = (0usize, 0usize);
        for (p, t) in self.labels.iter().zip(truth) {
            if let Some(t) = t {
                total += 1;
                hit += usize::from(p == t);
            }
        }
        if total == 0 {
            return Err(G5Error::Contract("no labelled nodes to evaluate against".into()));
        }
        Ok(hit as f64 / total as f64)
    }

    pub fn to_csv(&self, dataset: &GraphDataset) -> Result<String> {
        if dataset.num_nodes() != self.num_nodes() {
            return Err(G5Error::Shape(format!(
                "graph '{}' has {} nodes, reasoned labels cover {}",
                dataset.id(),
                dataset.num_nodes(),
                self.num_nodes()
            )));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REASONED_HEADER.split(','))
            .map_err(|e| G5Error::Schema(e.to_string()))?;
        for (i, name) in dataset.node_ids().iter().enumerate() {
            w.write_record([
                name.clone(),
                self.labels[i].to_string(),
                format!("{:.6}", self.max_prob(i)),
                format!("{:.6}", self.node_entropy(i)),
            ])
            .map_err(|e| G5Error::Schema(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| G5Error::Schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| G5Error::Schema(e.to_string()))
    }

    pub fn export_csv(&self, dataset: &GraphDataset, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv(dataset)?.as_bytes())
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn assign_labels(distributions: &Tensor) -> Vec<usize> {
    (0..distributions.rows()).map(|i| argmax(distributions.row(i))).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}
