use rand::Rng;

use super::{Init, Mode, ModelConfig, Residual};
use crate::error::{G5Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Parameters of one graph-transformer layer.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o_w: ParamId,
    pub o_b: ParamId,
    pub res: Option<ParamId>,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

impl LayerParams {
    /// Parameter names and initialisers for a layer under `prefix`.
    pub fn specs(prefix: &str, cfg: &ModelConfig) -> Vec<(String, Init)> {
        let (d, f) = (cfg.hidden, cfg.intermediate);
        let n = |s: &str| format!("{prefix}.{s}");
        let mut out = vec![
            (n("q"), Init::Xavier(d, d)),
            (n("k"), Init::Xavier(d, d)),
            (n("v"), Init::Xavier(d, d)),
            (n("o.w"), Init::Xavier(d, d)),
            (n("o.b"), Init::Fill(d, 0.0)),
        ];
        if cfg.residual == Residual::GraphRaw {
            out.push((n("res"), Init::Xavier(d, d)));
        }
        out.extend([
            (n("ln1.g"), Init::Fill(d, 1.0)),
            (n("ln1.b"), Init::Fill(d, 0.0)),
            (n("ff1.w"), Init::Xavier(d, f)),
            (n("ff1.b"), Init::Fill(f, 0.0)),
            (n("ff2.w"), Init::Xavier(f, d)),
            (n("ff2.b"), Init::Fill(d, 0.0)),
            (n("ln2.g"), Init::Fill(d, 1.0)),
            (n("ln2.b"), Init::Fill(d, 0.0)),
        ]);
        out
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |s: &str| {
            let name = format!("{prefix}.{s}");
            store
                .id(&name)
                .ok_or_else(|| G5Error::Integrity(format!("missing parameter '{name}'")))
        };
        Ok(LayerParams {
            q: get("q")?,
            k: get("k")?,
            v: get("v")?,
            o_w: get("o.w")?,
            o_b: get("o.b")?,
            res: store.id(&format!("{prefix}.res")),
            ln1_g: get("ln1.g")?,
            ln1_b: get("ln1.b")?,
            ff1_w: get("ff1.w")?,
            ff1_b: get("ff1.b")?,
            ff2_w: get("ff2.w")?,
            ff2_b: get("ff2.b")?,
            ln2_g: get("ln2.g")?,
            ln2_b: get("ln2.b")?,
        })
    }
}

/// Inverted dropout; identity in eval mode or when `p` is zero.
pub(crate) fn dropout(tape: &mut Tape, x: Var, p: f64, mode: &mut Mode) -> Result<Var> {
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.gen_bool(p) { 0.0 } else { keep })
        .collect();
    tape.dropout_mask(x, mask)
}

pub(crate) fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
    let wv = tape.param(store, w);
    let y = tape.matmul(x, wv)?;
    match b {
        Some(b) => {
            let bv = tape.param(store, b);
            tape.add_bias(y, bv)
        }
        None => Ok(y),
    }
}

/// Shape bookkeeping for a batch of equally sized row groups.
#[derive(Clone, Debug)]
pub struct Groups {
    pub count: usize,
    pub rows: usize,
    /// Number of real (non-padding) rows in each group.
    pub valid: Vec<usize>,
}

pub struct LayerOutput {
    pub out: Var,
    /// Attention probabilities `[groups * heads, rows, rows]`.
    pub attention: Var,
}

/// One graph-transformer layer over `groups.count` stacked subgraphs:
///
/// ```text
/// A   = softmax(Q K^T / sqrt(d_head)) V            (per head, heads concatenated, projected)
/// X1  = LayerNorm(Z + A + X_raw W_res)
/// out = LayerNorm(X1 + FF(X1))
/// ```
pub fn g_transformer_layer(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LayerParams,
    z: Var,
    x_raw: Var,
    groups: &Groups,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<LayerOutput> {
    let (g, r, h) = (groups.count, groups.rows, cfg.heads);
    let q = linear(tape, store, z, p.q, None)?;
    let k = linear(tape, store, z, p.k, None)?;
    let v = linear(tape, store, z, p.v, None)?;
    let q = tape.split_heads(q, g, r, h)?;
    let k = tape.split_heads(k, g, r, h)?;
    let v = tape.split_heads(v, g, r, h)?;
    let scores = tape.batch_matmul_nt(q, k)?;
    let mut scores = tape.scale(scores, 1.0 / (cfg.head_dim() as f64).sqrt());
    if cfg.mask_padding {
        let mut bias = vec![0.0; g * h * r * r];
        for (gi, &valid) in groups.valid.iter().enumerate() {
            for hi in 0..h {
                let base = (gi * h + hi) * r * r;
                for row in 0..r {
                    for col in valid.max(1)..r {
                        bias[base + row * r + col] = -1e9;
                    }
                }
            }
        }
        scores = tape.add_const(scores, &Tensor::new(vec![g * h, r, r], bias)?)?;
    }
    let attention = tape.softmax(scores)?;
    let probs = dropout(tape, attention, cfg.attention_dropout, mode)?;
    let ctx = tape.batch_matmul(probs, v)?;
    let ctx = tape.merge_heads(ctx, g, h)?;
    let a = linear(tape, store, ctx, p.o_w, Some(p.o_b))?;
    let a = dropout(tape, a, cfg.hidden_dropout, mode)?;

    let mut x1 = tape.add(z, a)?;
    if let Some(res) = p.res {
        let r = linear(tape, store, x_raw, res, None)?;
        x1 = tape.add(x1, r)?;
    }
    let (g1, b1) = (tape.param(store, p.ln1_g), tape.param(store, p.ln1_b));
    let x1 = tape.layer_norm(x1, g1, b1, cfg.layer_norm_eps)?;

    let ff = linear(tape, store, x1, p.ff1_w, Some(p.ff1_b))?;
    let ff = tape.gelu(ff);
    let ff = linear(tape, store, ff, p.ff2_w, Some(p.ff2_b))?;
    let ff = dropout(tape, ff, cfg.hidden_dropout, mode)?;
    let x2 = tape.add(x1, ff)?;
    let (g2, b2) = (tape.param(store, p.ln2_g), tape.param(store, p.ln2_b));
    let out = tape.layer_norm(x2, g2, b2, cfg.layer_norm_eps)?;
    Ok(LayerOutput { out, attention })
}
