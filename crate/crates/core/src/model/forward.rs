use std::collections::HashMap;

use super::layer::{dropout, g_transformer_layer, linear, Groups};
use super::posenc::add_structural;
use super::state::{head_prefix, input_prefix};
use super::{Mode, ModelState};
use crate::error::{shape_err, Result};
use crate::graph::GraphDataset;
use crate::preprocess::{SubgraphBatch, SubgraphRecord};
use crate::tensor::{softmax_rows, SparseRows, Tape, Tensor, Var};

/// Initial embeddings of a batch of subgraphs, stacked as
/// `[records * (k + 1), hidden]` where `k` is the graph's context size.
///
/// Row `j` of a subgraph is the raw-feature embedding of its `j`-th node plus
/// sinusoidal encodings of that node's WL code, its rank `j` and its hop
/// distance to the target. Rows past the end of a short context are zero.
pub fn embed_subgraph(
    tape: &mut Tape,
    state: &ModelState,
    graph: &str,
    features: &SparseRows,
    records: &[&SubgraphRecord],
) -> Result<(Var, Groups)> {
    let slot = state.graph(graph)?;
    if features.cols() != slot.feature_dim {
        return shape_err(format!(
            "graph '{graph}' features have width {}, the input component expects {}",
            features.cols(),
            slot.feature_dim
        ));
    }
    let d = state.config.hidden;
    let rows = slot.k + 1;
    let mut unique = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    let mut index = Vec::with_capacity(records.len() * rows);
    let mut structural = vec![0.0; records.len() * rows * d];
    let mut valid = Vec::with_capacity(records.len());
    for (g, rec) in records.iter().enumerate() {
        let len = rec.len().min(rows);
        valid.push(len);
        for j in 0..rows {
            if j < len {
                let u = rec.nodes[j];
                let next = unique.len();
                let p = *pos.entry(u).or_insert_with(|| {
                    unique.push(u);
                    next
                });
                index.push(Some(p));
                let o = (g * rows + j) * d;
                add_structural(rec.wl[j], j, rec.hops[j], &mut structural[o..o + d]);
            } else {
                index.push(None);
            }
        }
    }
    let ip = input_prefix(graph);
    let w = tape.param(&state.store, state.param_id(&format!("{ip}.feat.w"))?);
    let b = tape.param(&state.store, state.param_id(&format!("{ip}.feat.b"))?);
    let e = tape.sparse_matmul(features.select(&unique), w)?;
    let e = tape.add_bias(e, b)?;
    let e = tape.gather_rows(e, index)?;
    let h0 = tape.add_const(e, &Tensor::new(vec![records.len() * rows, d], structural)?)?;
    Ok((
        h0,
        Groups {
            count: records.len(),
            rows,
            valid,
        },
    ))
}

/// The graph's own transformer layers; the residual input is the embedding
/// matrix. Returns the final hidden states and each layer's attention.
pub fn input_forward(
    tape: &mut Tape,
    state: &ModelState,
    graph: &str,
    h0: Var,
    groups: &Groups,
    mode: &mut Mode,
) -> Result<(Var, Vec<Var>)> {
    let x = dropout(tape, h0, state.config.hidden_dropout, mode)?;
    let mut h = x;
    let mut attention = Vec::new();
    for p in state.input_layers(graph)? {
        let o = g_transformer_layer(tape, &state.store, &p, h, x, groups, &state.config, mode)?;
        h = o.out;
        attention.push(o.attention);
    }
    Ok((h, attention))
}

/// Prune trailing rows or append zero rows so every group has `k + 1` rows.
pub fn unify(tape: &mut Tape, h: Var, groups: &Groups, k: usize) -> Result<(Var, Groups)> {
    let to = k + 1;
    let out = tape.resize_groups(h, groups.count, groups.rows, to)?;
    Ok((
        out,
        Groups {
            count: groups.count,
            rows: to,
            valid: groups.valid.iter().map(|&v| v.min(to)).collect(),
        },
    ))
}

/// The shared core. Returns the final hidden states and each layer's attention.
pub fn universal_forward(
    tape: &mut Tape,
    state: &ModelState,
    z0: Var,
    groups: &Groups,
    mode: &mut Mode,
) -> Result<(Var, Vec<Var>)> {
    if groups.rows != state.universal_k + 1 {
        return shape_err(format!(
            "core expects {} rows per subgraph, got {}",
            state.universal_k + 1,
            groups.rows
        ));
    }
    let mut z = z0;
    let mut attention = Vec::new();
    for p in state.core_layers()? {
        let o = g_transformer_layer(tape, &state.store, &p, z, z0, groups, &state.config, mode)?;
        z = o.out;
        attention.push(o.attention);
    }
    Ok((z, attention))
}

/// Row mean of each subgraph: one vector per target node.
pub fn fuse(tape: &mut Tape, z: Var, groups: &Groups) -> Result<Var> {
    tape.group_mean(z, groups.count, groups.rows)
}

pub struct Encoded {
    /// Fused representations `[targets, hidden]`.
    pub z: Var,
    pub input_attention: Vec<Var>,
    pub core_attention: Vec<Var>,
}

/// Full representation pipeline for the given target nodes of one graph.
pub fn encode(
    tape: &mut Tape,
    state: &ModelState,
    dataset: &GraphDataset,
    batch: &SubgraphBatch,
    targets: &[usize],
    mode: &mut Mode,
) -> Result<Encoded> {
    let records = batch.select(targets);
    let (h0, groups) = embed_subgraph(tape, state, dataset.id(), dataset.sparse_features(), &records)?;
    let (h, input_attention) = input_forward(tape, state, dataset.id(), h0, &groups, mode)?;
    let (z0, core_groups) = unify(tape, h, &groups, state.universal_k)?;
    let (z, core_attention) = universal_forward(tape, state, z0, &core_groups, mode)?;
    let z = fuse(tape, z, &core_groups)?;
    Ok(Encoded {
        z,
        input_attention,
        core_attention,
    })
}

/// Classification logits from fused representations.
pub fn classify_logits(tape: &mut Tape, state: &ModelState, graph: &str, z: Var) -> Result<Var> {
    state.graph(graph)?;
    let hp = head_prefix(graph);
    let depth = state.config.classifier_depth;
    let mut x = z;
    for j in 0..depth {
        let w = state.param_id(&format!("{hp}.cls{j}.w"))?;
        let b = state.param_id(&format!("{hp}.cls{j}.b"))?;
        x = linear(tape, &state.store, x, w, Some(b))?;
        if j + 1 < depth {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Label distribution `softmax(FC(z))`.
pub fn classify(tape: &mut Tape, state: &ModelState, graph: &str, z: Var) -> Result<Var> {
    let logits = classify_logits(tape, state, graph, z)?;
    tape.softmax(logits)
}

/// Raw-attribute estimate from fused representations.
pub fn reconstruct(tape: &mut Tape, state: &ModelState, graph: &str, z: Var) -> Result<Var> {
    state.graph(graph)?;
    let hp = head_prefix(graph);
    let w = state.param_id(&format!("{hp}.recon.w"))?;
    let b = state.param_id(&format!("{hp}.recon.b"))?;
    linear(tape, &state.store, z, w, Some(b))
}

/// Link logits `z_u . z_v / sqrt(hidden)` for row-aligned pairs; the link
/// probability is the logistic of this value.
pub fn link_logits(tape: &mut Tape, zu: Var, zv: Var) -> Result<Var> {
    let d = tape.value(zu).cols();
    let dot = tape.row_dot(zu, zv)?;
    Ok(tape.scale(dot, 1.0 / (d as f64).sqrt()))
}

/// Eval-mode representations of every node, computed `chunk` targets at a time.
pub fn representations(
    state: &ModelState,
    dataset: &GraphDataset,
    batch: &SubgraphBatch,
    chunk: usize,
) -> Result<Tensor> {
    let n = dataset.num_nodes();
    let d = state.config.hidden;
    let mut out = Vec::with_capacity(n * d);
    let all: Vec<usize> = (0..n).collect();
    for part in all.chunks(chunk.max(1)) {
        let mut tape = Tape::new();
        let enc = encode(&mut tape, state, dataset, batch, part, &mut Mode::Eval)?;
        out.extend_from_slice(tape.value(enc.z).data());
    }
    Tensor::new(vec![n, d], out)
}

/// Label distributions from precomputed representations.
pub fn predict_proba(state: &ModelState, graph: &str, z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let logits = classify_logits(&mut tape, state, graph, zv)?;
    softmax_rows(tape.value(logits))
}
