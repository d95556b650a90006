use crate::error::{contract_err, shape_err, Result};

/// Routing iterations when none are configured.
pub const DEFAULT_ROUTING_ITERATIONS: usize = 3;

/// Outcome of routing one node's source vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState {
    /// Routing logits after the last update, one per source.
    pub b: Vec<f64>,
    /// Couplings used in each iteration.
    pub couplings: Vec<Vec<f64>>,
    /// Weighted sum from the final iteration.
    pub s: Vec<f64>,
    /// Squashed output, `|v| < 1`.
    pub v: Vec<f64>,
}

impl RoutingState {
    /// Couplings that produced `v`.
    pub fn final_couplings(&self) -> &[f64] {
        self.couplings.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `|s|^2 / (1 + |s|^2) * s / |s|`, zero at `s = 0`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let g = n / (1.0 + n * n);
    s.iter().map(|x| x * g).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dynamic routing over one node's per-source vectors, logits starting at zero.
pub fn cdr_route(u: &[&[f64]], iterations: usize) -> Result<RoutingState> {
    if u.is_empty() {
        return contract_err("routing needs at least one source vector");
    }
    if iterations == 0 {
        return contract_err("routing needs at least one iteration");
    }
    let d = u[0].len();
    if u.iter().any(|x| x.len() != d) {
        return shape_err("routing: source vectors differ in length");
    }
    let mut b = vec![0.0; u.len()];
    let mut couplings = Vec::with_capacity(iterations);
    let mut s = vec![0.0; d];
    let mut v = vec![0.0; d];
    for _ in 0..iterations {
        let c = softmax(&b);
        s = vec![0.0; d];
        for (cl, ul) in c.iter().zip(u) {
            s.iter_mut().zip(ul.iter()).for_each(|(acc, x)| *acc += cl * x);
        }
        v = squash(&s);
        for (bl, ul) in b.iter_mut().zip(u) {
            *bl += dot(&v, ul);
        }
        couplings.push(c);
    }
    Ok(RoutingState { b, couplings, s, v })
}
