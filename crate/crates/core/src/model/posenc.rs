use crate::error::{contract_err, Result};

/// Fixed sinusoidal encoding: entry `2i` is `sin(index / 10000^(2i/dim))`,
/// entry `2i + 1` the matching cosine.
pub fn position_embedding(index: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return contract_err(format!("positional encoding width {dim} must be even"));
    }
    let mut out = vec![0.0; dim];
    fill(index, &mut out);
    Ok(out)
}

pub(crate) fn fill(index: usize, out: &mut [f64]) {
    let dim = out.len();
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        let angle = index as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
}

/// Adds the WL-code, rank and hop encodings into `out` (width = `out.len()`).
pub(crate) fn add_structural(wl: usize, rank: usize, hop: usize, out: &mut [f64]) {
    let mut buf = vec![0.0; out.len()];
    for idx in [wl, rank, hop] {
        fill(idx, &mut buf);
        out.iter_mut().zip(&buf).for_each(|(o, b)| *o += b);
    }
}
