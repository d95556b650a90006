use serde::{Deserialize, Serialize};

use super::bank::SourceLabels;
use super::labels::ReasonedLabels;
use super::routing::cdr_route;
use crate::error::{contract_err, shape_err, G5Error, Result};
use crate::tensor::{derived_rng, softmax_rows, xavier_uniform, Adam, AdamConfig, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReasonSettings {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub routing_iterations: usize,
}

impl Default for ReasonSettings {
    fn default() -> Self {
        ReasonSettings {
            epochs: 200,
            lr: 0.01,
            weight_decay: 0.0,
            routing_iterations: super::DEFAULT_ROUTING_ITERATIONS,
        }
    }
}

impl ReasonSettings {
    pub fn validate(&self) -> Result<()> {
        if self.routing_iterations == 0 {
            return Err(G5Error::Config("routing_iterations must be at least 1".into()));
        }
        AdamConfig::with_lr(self.lr, self.weight_decay).validate()
    }
}

/// Freshly initialised trainable maps of one reasoner, kept apart from the
/// model so the source heads cannot move.
struct Maps {
    store: ParamStore,
    head_w: ParamId,
    head_b: ParamId,
    per_source: Vec<(ParamId, Option<ParamId>)>,
}

impl Maps {
    fn new(kind: &str, hidden: usize, classes: usize, bank: &[SourceLabels], bias: bool, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = derived_rng(seed, &format!("reason/{kind}/head"));
        let head_w = store.insert("head.w", xavier_uniform(hidden, classes, &mut rng))?;
        let head_b = store.insert("head.b", Tensor::zeros(&[classes]))?;
        let mut per_source = Vec::with_capacity(bank.len());
        for (i, s) in bank.iter().enumerate() {
            let dl = s.probs.cols();
            let mut rng = derived_rng(seed, &format!("reason/{kind}/source{i}"));
            let (fan_in, fan_out) = if bias { (classes, dl) } else { (dl, classes) };
            let w = store.insert(format!("map{i}.w"), xavier_uniform(fan_in, fan_out, &mut rng))?;
            let b = if bias {
                Some(store.insert(format!("map{i}.b"), Tensor::zeros(&[dl]))?)
            } else {
                None
            };
            per_source.push((w, b));
        }
        Ok(Maps {
            store,
            head_w,
            head_b,
            per_source,
        })
    }

    fn head(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let w = tape.param(&self.store, self.head_w);
        let b = tape.param(&self.store, self.head_b);
        let x = tape.matmul(z, w)?;
        let x = tape.add_bias(x, b)?;
        tape.softmax(x)
    }

    fn head_distributions(&self, z: &Tensor) -> Result<Tensor> {
        let x = z.matmul(self.store.value(self.head_w))?;
        let b = self.store.value(self.head_b).data();
        let c = b.len();
        let mut x = x;
        for row in x.data_mut().chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        softmax_rows(&x)
    }
}

fn check_inputs(z: &Tensor, bank: &[SourceLabels], classes: usize) -> Result<usize> {
    let (n, _) = z.dims2()?;
    if bank.is_empty() {
        return contract_err("reasoning needs at least one source graph");
    }
    if classes == 0 {
        return contract_err("target must have at least one class");
    }
    if let Some(s) = bank.iter().find(|s| s.probs.rows() != n) {
        return shape_err(format!(
            "source '{}' labels {} nodes, representations cover {n}",
            s.source,
            s.probs.rows()
        ));
    }
    if n == 0 {
        return contract_err("no target nodes to reason about");
    }
    Ok(n)
}

fn optimise(
    maps: &mut Maps,
    settings: &ReasonSettings,
    mut loss_fn: impl FnMut(&mut Tape, &Maps) -> Result<Var>,
) -> Result<Vec<f64>> {
    settings.validate()?;
    let cfg = AdamConfig::with_lr(settings.lr, settings.weight_decay);
    let mut adam = Adam::new();
    let mut trace = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, maps)?;
        let l = tape.value(loss).item()?;
        if !l.is_finite() {
            return Err(G5Error::Numeric(format!("reasoning loss is {l} at epoch {epoch}")));
        }
        maps.store.zero_grad();
        tape.backward(loss, &mut maps.store)?;
        adam.step(&mut maps.store, &cfg)?;
        trace.push(l);
    }
    Ok(trace)
}

/// Mean over nodes of `sum_l |ybar_l - softmax(P_l softmax(FC z))|`.
fn cccm_loss(tape: &mut Tape, maps: &Maps, z: &Tensor, bank: &[SourceLabels]) -> Result<Var> {
    let zv = tape.constant(z.clone());
    let y = maps.head(tape, zv)?;
    let mut total: Option<Var> = None;
    for (s, &(w, b)) in bank.iter().zip(&maps.per_source) {
        let wv = tape.param(&maps.store, w);
        let mut x = tape.matmul(y, wv)?;
        if let Some(b) = b {
            let bv = tape.param(&maps.store, b);
            x = tape.add_bias(x, bv)?;
        }
        let yhat = tape.softmax(x)?;
        let target = tape.constant(s.probs.clone());
        let diff = tape.sub(target, yhat)?;
        let norms = tape.row_norm(diff)?;
        total = Some(match total {
            None => norms,
            Some(t) => tape.add(t, norms)?,
        });
    }
    let total = total.expect("bank is non-empty");
    tape.mean(total)
}

/// Consistency reasoning: train a target head and per-source projections so
/// that projecting the head's output reproduces each source head's output.
pub fn cccm_fit(z: &Tensor, bank: &[SourceLabels], classes: usize, settings: &ReasonSettings, seed: u64) -> Result<ReasonedLabels> {
    check_inputs(z, bank, classes)?;
    let mut maps = Maps::new("cccm", z.cols(), classes, bank, true, seed)?;
    let trace = optimise(&mut maps, settings, |tape, m| cccm_loss(tape, m, z, bank))?;
    ReasonedLabels::from_distributions(maps.head_distributions(z)?, trace)
}

/// Per-source adjusted vectors `ybar_l W_l` on the tape, `[nodes, classes]` each.
fn adjusted(tape: &mut Tape, maps: &Maps, bank: &[SourceLabels]) -> Result<Vec<Var>> {
    bank.iter()
        .zip(&maps.per_source)
        .map(|(s, &(w, _))| {
            let y = tape.constant(s.probs.clone());
            let wv = tape.param(&maps.store, w);
            tape.matmul(y, wv)
        })
        .collect()
}

/// Route every node; the couplings are computed numerically and the final
/// iteration is rebuilt on the tape so gradients reach the adjusters.
fn routed(tape: &mut Tape, u: &[Var], iterations: usize) -> Result<Var> {
    let (n, _) = tape.value(u[0]).dims2()?;
    let mut couplings = vec![vec![0.0; n]; u.len()];
    for i in 0..n {
        let rows: Vec<&[f64]> = u.iter().map(|&ul| tape.value(ul).row(i)).collect();
        let r = cdr_route(&rows, iterations)?;
        for (l, c) in r.final_couplings().iter().enumerate() {
            couplings[l][i] = *c;
        }
    }
    let mut s: Option<Var> = None;
    for (&ul, c) in u.iter().zip(couplings) {
        let part = tape.scale_rows(ul, c)?;
        s = Some(match s {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    tape.squash(s.expect("bank is non-empty"))
}

/// Mean over nodes of `|softmax(FC z) - v|`.
fn cdr_loss(tape: &mut Tape, maps: &Maps, z: &Tensor, bank: &[SourceLabels], iterations: usize) -> Result<Var> {
    let zv = tape.constant(z.clone());
    let y = maps.head(tape, zv)?;
    let u = adjusted(tape, maps, bank)?;
    let v = routed(tape, &u, iterations)?;
    let diff = tape.sub(y, v)?;
    let norms = tape.row_norm(diff)?;
    tape.mean(norms)
}

/// Routing reasoning: train a target head toward the routed agreement of the
/// dimension-adjusted source label vectors.
pub fn cdr_fit(z: &Tensor, bank: &[SourceLabels], classes: usize, settings: &ReasonSettings, seed: u64) -> Result<ReasonedLabels> {
    check_inputs(z, bank, classes)?;
    let mut maps = Maps::new("cdr", z.cols(), classes, bank, false, seed)?;
    let it = settings.routing_iterations;
    let trace = optimise(&mut maps, settings, |tape, m| cdr_loss(tape, m, z, bank, it))?;
    ReasonedLabels::from_distributions(maps.head_distributions(z)?, trace)
}
