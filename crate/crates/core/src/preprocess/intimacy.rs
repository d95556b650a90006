use nalgebra::DMatrix;

use crate::error::{contract_err, G5Error, Result};
use crate::graph::GraphDataset;
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.15;

/// Column-stochastic transition matrix `A D^-1` as a dense tensor.
/// Isolated nodes transition to themselves.
pub fn normalize_adjacency(dataset: &GraphDataset) -> Tensor {
    let n = dataset.num_nodes();
    let mut a = Tensor::zeros(&[n, n]);
    let data = a.data_mut();
    for j in 0..n {
        let nb = dataset.neighbors(j);
        if nb.is_empty() {
            data[j * n + j] = 1.0;
        } else {
            let w = 1.0 / nb.len() as f64;
            for &i in nb {
                data[i * n + j] = w;
            }
        }
    }
    a
}

/// Dense intimacy matrix `S = alpha (I - (1 - alpha) A D^-1)^-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntimacyMatrix {
    scores: Tensor,
    alpha: f64,
}

impl IntimacyMatrix {
    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_nodes(&self) -> usize {
        self.scores.rows()
    }

    /// Row `v`: how strongly every other node bears on `v`.
    pub fn row(&self, v: usize) -> &[f64] {
        self.scores.row(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntimacyMethod {
    /// LU solve of the dense system.
    DenseSolve,
    /// Fixed-point iteration `S <- alpha I + (1 - alpha) A D^-1 S` with a sparse transition.
    PowerIteration { tol: f64 },
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return contract_err(format!("alpha {alpha} outside (0, 1)"));
    }
    Ok(())
}

pub fn compute_intimacy(dataset: &GraphDataset, alpha: f64) -> Result<IntimacyMatrix> {
    compute_intimacy_with(dataset, alpha, IntimacyMethod::PowerIteration { tol: 1e-12 })
}

pub fn compute_intimacy_with(
    dataset: &GraphDataset,
    alpha: f64,
    method: IntimacyMethod,
) -> Result<IntimacyMatrix> {
    check_alpha(alpha)?;
    let n = dataset.num_nodes();
    let scores = match method {
        IntimacyMethod::DenseSolve => dense_solve(dataset, alpha)?,
        IntimacyMethod::PowerIteration { tol } => power_iteration(dataset, alpha, tol)?,
    };
    debug_assert_eq!(scores.shape(), &[n, n]);
    Ok(IntimacyMatrix { scores, alpha })
}

fn dense_solve(dataset: &GraphDataset, alpha: f64) -> Result<Tensor> {
    let n = dataset.num_nodes();
    let a = normalize_adjacency(dataset);
    let m = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - (1.0 - alpha) * a.get2(i, j)
    });
    let rhs = DMatrix::from_diagonal_element(n, n, alpha);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| G5Error::Numeric("singular intimacy system".into()))?;
    let mut out = Tensor::zeros(&[n, n]);
    let data = out.data_mut();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = sol[(i, j)];
        }
    }
    Ok(out)
}

fn power_iteration(dataset: &GraphDataset, alpha: f64, tol: f64) -> Result<Tensor> {
    let n = dataset.num_nodes();
    let damp = 1.0 - alpha;
    let mut s = Tensor::identity(n);
    s.data_mut().iter_mut().for_each(|x| *x *= alpha);
    let mut next = vec![0.0; n * n];
    // (A D^-1 S)(i, :) = sum over neighbours j of i of S(j, :) / deg(j)
    for _ in 0..10_000 {
        next.iter_mut().for_each(|x| *x = 0.0);
        let cur = s.data();
        for i in 0..n {
            let out = &mut next[i * n..(i + 1) * n];
            out[i] += alpha;
            let nb = dataset.neighbors(i);
            if nb.is_empty() {
                for (o, x) in out.iter_mut().zip(&cur[i * n..(i + 1) * n]) {
                    *o += damp * x;
                }
            }
            for &j in nb {
                let w = damp / dataset.degree(j) as f64;
                for (o, x) in out.iter_mut().zip(&cur[j * n..(j + 1) * n]) {
                    *o += w * x;
                }
            }
        }
        let delta = next
            .iter()
            .zip(cur)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        s.data_mut().copy_from_slice(&next);
        if !delta.is_finite() {
            return Err(G5Error::Numeric("intimacy iteration diverged".into()));
        }
        // The contraction factor is 1 - alpha, so the distance to the fixed
        // point is at most delta * (1 - alpha) / alpha.
        if delta * damp / alpha < tol {
            return Ok(s);
        }
    }
    Err(G5Error::Numeric("intimacy iteration did not converge".into()))
}

/// Sparse approximation of row `v` of `S` by forward push, for graphs too
/// large for a dense matrix. Entries are exact up to `tol * deg` residual mass.
///
/// Uses the reversibility identity `S(v, j) = deg(v) / deg(j) * S(j, v)`: the
/// column `S(:, v)` is the restart-at-`v` random-walk distribution that push computes.
pub fn intimacy_row_push(dataset: &GraphDataset, v: usize, alpha: f64, tol: f64) -> Result<Vec<(usize, f64)>> {
    check_alpha(alpha)?;
    let n = dataset.num_nodes();
    if v >= n {
        return contract_err(format!("node {v} out of range for {n} nodes"));
    }
    let deg = |u: usize| dataset.degree(u).max(1) as f64;
    let mut p: std::collections::HashMap<usize, f64> = Default::default();
    let mut r: std::collections::HashMap<usize, f64> = Default::default();
    r.insert(v, 1.0);
    let mut queue = std::collections::VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        let ru = r.insert(u, 0.0).unwrap_or(0.0);
        if ru <= tol * deg(u) {
            r.insert(u, ru);
            continue;
        }
        let nb = dataset.neighbors(u);
        if nb.is_empty() {
            *p.entry(u).or_default() += ru;
            continue;
        }
        *p.entry(u).or_default() += alpha * ru;
        let share = (1.0 - alpha) * ru / nb.len() as f64;
        for &w in nb {
            let e = r.entry(w).or_default();
            let before = *e;
            *e += share;
            if before <= tol * deg(w) && *e > tol * deg(w) {
                queue.push_back(w);
            }
        }
    }
    let dv = deg(v);
    let mut row: Vec<(usize, f64)> = p
        .into_iter()
        .filter(|&(_, x)| x > 0.0)
        .map(|(j, x)| (j, dv / deg(j) * x))
        .collect();
    row.sort_unstable_by_key(|&(j, _)| j);
    Ok(row)
}
