use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerParams;
use super::ModelConfig;
use crate::error::{G5Error, Result};
use crate::tensor::{derived_rng, xavier_uniform, ParamId, ParamStore, Tensor};

/// How a parameter starts out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Xavier-uniform `[fan_in, fan_out]` matrix.
    Xavier(usize, usize),
    /// Vector of the given length holding one value.
    Fill(usize, f64),
}

impl Init {
    fn build(self, seed: u64, name: &str) -> Tensor {
        match self {
            Init::Xavier(i, o) => xavier_uniform(i, o, &mut derived_rng(seed, name)),
            Init::Fill(n, v) => Tensor::filled(&[n], v),
        }
    }
}

/// Per-graph sizes the model was built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSlot {
    /// Context size sampled for this graph.
    pub k: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

pub const CORE: &str = "core";

pub fn input_prefix(graph: &str) -> String {
    format!("input.{graph}")
}

pub fn head_prefix(graph: &str) -> String {
    format!("head.{graph}")
}

fn check_graph_id(id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(G5Error::Config(format!(
            "graph id '{id}' must be non-empty ASCII letters, digits, '_' or '-'"
        )));
    }
    Ok(())
}

/// All trainable state: the shared core plus, for every registered graph, an
/// input component and a set of output heads.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    /// Context size accepted by the shared core.
    pub universal_k: usize,
    pub seed: u64,
    pub store: ParamStore,
    graphs: BTreeMap<String, GraphSlot>,
}

impl ModelState {
    pub fn new(config: ModelConfig, universal_k: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if universal_k == 0 {
            return Err(G5Error::Config("universal k must be at least 1".into()));
        }
        let mut state = ModelState {
            config,
            universal_k,
            seed,
            store: ParamStore::new(),
            graphs: BTreeMap::new(),
        };
        for (name, init) in state.core_specs() {
            let t = init.build(seed, &name);
            state.store.insert(name, t)?;
        }
        Ok(state)
    }

    /// Rebuild from named tensors, checking every expected parameter is present
    /// with the right shape and nothing else is.
    pub fn from_parts(
        config: ModelConfig,
        universal_k: usize,
        seed: u64,
        graphs: BTreeMap<String, GraphSlot>,
        mut tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let mut state = ModelState {
            config,
            universal_k,
            seed,
            store: ParamStore::new(),
            graphs: BTreeMap::new(),
        };
        let mut specs = state.core_specs();
        for (id, slot) in &graphs {
            check_graph_id(id)?;
            specs.extend(state.graph_specs(id, slot));
        }
        for (name, init) in specs {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| G5Error::Integrity(format!("checkpoint lacks parameter '{name}'")))?;
            let expect = init.build(0, &name);
            if t.shape() != expect.shape() {
                return Err(G5Error::Integrity(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    expect.shape()
                )));
            }
            state.store.insert(name, t)?;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(G5Error::Integrity(format!("unexpected parameter '{extra}'")));
        }
        state.graphs = graphs;
        Ok(state)
    }

    fn core_specs(&self) -> Vec<(String, Init)> {
        (0..self.config.core_depth)
            .flat_map(|l| LayerParams::specs(&format!("{CORE}.layer{l}"), &self.config))
            .collect()
    }

    fn graph_specs(&self, id: &str, slot: &GraphSlot) -> Vec<(String, Init)> {
        let cfg = &self.config;
        let d = cfg.hidden;
        let ip = input_prefix(id);
        let hp = head_prefix(id);
        let mut out = vec![
            (format!("{ip}.feat.w"), Init::Xavier(slot.feature_dim, d)),
            (format!("{ip}.feat.b"), Init::Fill(d, 0.0)),
        ];
        for l in 0..cfg.input_depth {
            out.extend(LayerParams::specs(&format!("{ip}.layer{l}"), cfg));
        }
        out.push((format!("{hp}.recon.w"), Init::Xavier(d, slot.feature_dim)));
        out.push((format!("{hp}.recon.b"), Init::Fill(slot.feature_dim, 0.0)));
        for j in 0..cfg.classifier_depth {
            let width = if j + 1 == cfg.classifier_depth { slot.num_classes } else { d };
            out.push((format!("{hp}.cls{j}.w"), Init::Xavier(d, width)));
            out.push((format!("{hp}.cls{j}.b"), Init::Fill(width, 0.0)));
        }
        out
    }

    /// Register a graph, creating its input component and heads.
    pub fn add_graph(&mut self, id: &str, slot: GraphSlot) -> Result<()> {
        check_graph_id(id)?;
        if self.graphs.contains_key(id) {
            return Err(G5Error::Contract(format!("graph '{id}' already registered")));
        }
        if slot.k == 0 || slot.feature_dim == 0 || slot.num_classes == 0 {
            return Err(G5Error::Config(format!("graph '{id}' has a zero size in {slot:?}")));
        }
        for (name, init) in self.graph_specs(id, &slot) {
            let t = init.build(self.seed, &name);
            self.store.insert(name, t)?;
        }
        self.graphs.insert(id.to_string(), slot);
        Ok(())
    }

    /// Fresh values for a graph's input component and heads, drawn from a
    /// stream keyed by `salt` so they are independent of the original ones.
    pub fn reinit_graph(&mut self, id: &str, salt: &str) -> Result<()> {
        let slot = self.graph(id)?.clone();
        let seed = derived_rng(self.seed, salt).gen::<u64>();
        for (name, init) in self.graph_specs(id, &slot) {
            let pid = self.param_id(&name)?;
            self.store.set_value(pid, init.build(seed, &name))?;
        }
        Ok(())
    }

    pub fn graph(&self, id: &str) -> Result<&GraphSlot> {
        self.graphs
            .get(id)
            .ok_or_else(|| G5Error::Contract(format!("graph '{id}' is not part of the model")))
    }

    pub fn graphs(&self) -> &BTreeMap<String, GraphSlot> {
        &self.graphs
    }

    pub fn param_id(&self, name: &str) -> Result<ParamId> {
        self.store
            .id(name)
            .ok_or_else(|| G5Error::Contract(format!("no parameter named '{name}'")))
    }

    pub fn core_layers(&self) -> Result<Vec<LayerParams>> {
        (0..self.config.core_depth)
            .map(|l| LayerParams::lookup(&self.store, &format!("{CORE}.layer{l}")))
            .collect()
    }

    pub fn input_layers(&self, id: &str) -> Result<Vec<LayerParams>> {
        self.graph(id)?;
        (0..self.config.input_depth)
            .map(|l| LayerParams::lookup(&self.store, &format!("{}.layer{l}", input_prefix(id))))
            .collect()
    }

    /// Named parameters in name order.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        self.store
            .iter_sorted()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Parameters whose name starts with `prefix`, for ownership checks.
    pub fn snapshot(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.store
            .iter_sorted()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }
}
