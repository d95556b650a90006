//! Reverse-mode tape.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! nodes in reverse, pushing adjoints to inputs and, for parameter leaves,
//! into the owning [`ParamStore`]. Nodes built only from constants carry no
//! adjoint.

use super::{gemm, softmax_in_place, ParamId, ParamStore, SparseRows, Tensor, CE_CLAMP};
use crate::error::{contract_err, shape_err, G5Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; indexes the adjoints from [`Tape::backward_with_inputs`].
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    SparseMatMul(SparseRows, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<Option<usize>>),
    SplitHeads {
        x: Var,
        groups: usize,
        rows: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        groups: usize,
        rows: usize,
        heads: usize,
    },
    BatchMatMulNT(Var, Var),
    BatchMatMul(Var, Var),
    ResizeGroups {
        x: Var,
        groups: usize,
        from: usize,
        to: usize,
    },
    GroupMean {
        x: Var,
        groups: usize,
        rows: usize,
    },
    RowDot(Var, Var),
    ScaleRows(Var, Vec<f64>),
    Squash(Var),
    RowNorm(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy(Var, Vec<usize>),
    Mse(Var, Tensor),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that collects an adjoint but belongs to no parameter store
    /// (useful for checking gradients with respect to inputs).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, s) = self.value(a).dims2()?;
        let (s2, t) = self.value(b).dims2()?;
        if s != s2 {
            return shape_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let mut out = vec![0.0; r * t];
        gemm(
            r,
            s,
            t,
            1.0,
            self.value(a).data(),
            s,
            1,
            self.value(b).data(),
            t,
            1,
            0.0,
            &mut out,
            t,
            1,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![r, t], out)?, Op::MatMul(a, b), ng))
    }

    /// Constant sparse rows times a dense weight.
    pub fn sparse_matmul(&mut self, x: SparseRows, w: Var) -> Result<Var> {
        let (din, d) = self.value(w).dims2()?;
        if x.cols() != din {
            return shape_err(format!(
                "sparse_matmul: features have {} columns, weight is {:?}",
                x.cols(),
                self.value(w).shape()
            ));
        }
        let wv = self.value(w).data();
        let mut out = vec![0.0; x.rows() * d];
        for i in 0..x.rows() {
            let o = &mut out[i * d..(i + 1) * d];
            for (j, v) in x.row_entries(i) {
                for (oc, wc) in o.iter_mut().zip(&wv[j * d..(j + 1) * d]) {
                    *oc += v * wc;
                }
            }
        }
        let n = x.rows();
        let ng = self.ng(w);
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::SparseMatMul(x, w), ng))
    }

    /// `x [n, m] + bias [m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(bias).len() != c {
            return shape_err(format!(
                "add_bias: {:?} + {:?}",
                self.value(x).shape(),
                self.value(bias).shape()
            ));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(o, bb)| *o += bb);
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, Op::Scale(x, s), |v| v * s)
    }

    /// `x + c` for a constant `c` of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return shape_err(format!(
                "add_const: {:?} vs {:?}",
                self.value(x).shape(),
                c.shape()
            ));
        }
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .zip(c.data())
            .for_each(|(o, cc)| *o += cc);
        let ng = self.ng(x);
        Ok(self.push(out, Op::AddConst(x), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), |v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.data().iter().any(|v| v.is_nan()) {
            return Err(G5Error::Numeric("softmax input contains NaN".into()));
        }
        let c = vx.cols().max(1);
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Layer normalisation over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return shape_err(format!(
                "layer_norm: input {:?}, gamma {:?}, beta {:?}",
                self.value(x).shape(),
                self.value(gamma).shape(),
                self.value(beta).shape()
            ));
        }
        let vx = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = vx.len() / c;
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Multiply by a precomputed mask (inverted dropout: entries are 0 or 1/(1-p)).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return shape_err("dropout mask length differs from input");
        }
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(o, m)| *o *= m);
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout(x, mask), ng))
    }

    /// Row gather from a matrix; `None` yields a zero row.
    pub fn gather_rows(&mut self, table: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let (n, c) = self.value(table).dims2()?;
        let mut out = vec![0.0; index.len() * c];
        for (i, ix) in index.iter().enumerate() {
            if let Some(r) = *ix {
                if r >= n {
                    return shape_err(format!("gather_rows: index {r} out of {n} rows"));
                }
                out[i * c..(i + 1) * c].copy_from_slice(self.value(table).row(r));
            }
        }
        let t = Tensor::new(vec![index.len(), c], out)?;
        let ng = self.ng(table);
        Ok(self.push(t, Op::Gather(table, index), ng))
    }

    /// `[groups * rows, heads * d]` to `[groups * heads, rows, d]`.
    pub fn split_heads(&mut self, x: Var, groups: usize, rows: usize, heads: usize) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if n != groups * rows || c % heads != 0 {
            return shape_err(format!(
                "split_heads: {:?} into {groups} groups x {rows} rows x {heads} heads",
                self.value(x).shape()
            ));
        }
        let d = c / heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for g in 0..groups {
            for r in 0..rows {
                for h in 0..heads {
                    let s = (g * rows + r) * c + h * d;
                    let o = ((g * heads + h) * rows + r) * d;
                    out[o..o + d].copy_from_slice(&src[s..s + d]);
                }
            }
        }
        let t = Tensor::new(vec![groups * heads, rows, d], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::SplitHeads {
                x,
                groups,
                rows,
                heads,
            },
            ng,
        ))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, groups: usize, heads: usize) -> Result<Var> {
        let (b, rows, d) = self.value(x).dims3()?;
        if b != groups * heads {
            return shape_err(format!(
                "merge_heads: batch {b} != {groups} groups x {heads} heads"
            ));
        }
        let c = heads * d;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for g in 0..groups {
            for r in 0..rows {
                for h in 0..heads {
                    let o = (g * rows + r) * c + h * d;
                    let s = ((g * heads + h) * rows + r) * d;
                    out[o..o + d].copy_from_slice(&src[s..s + d]);
                }
            }
        }
        let t = Tensor::new(vec![groups * rows, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::MergeHeads {
                x,
                groups,
                rows,
                heads,
            },
            ng,
        ))
    }

    /// Batched `a @ b^T`: `[B, R, D] x [B, S, D] -> [B, R, S]`.
    pub fn batch_matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, r, d) = self.value(a).dims3()?;
        let (bb, s, d2) = self.value(b).dims3()?;
        if ba != bb || d != d2 {
            return shape_err(format!(
                "batch_matmul_nt: {:?} x {:?}^T",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let mut out = vec![0.0; ba * r * s];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..ba {
            gemm(
                r,
                d,
                s,
                1.0,
                &av[i * r * d..(i + 1) * r * d],
                d,
                1,
                &bv[i * s * d..(i + 1) * s * d],
                1,
                d,
                0.0,
                &mut out[i * r * s..(i + 1) * r * s],
                s,
                1,
            );
        }
        let t = Tensor::new(vec![ba, r, s], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::BatchMatMulNT(a, b), ng))
    }

    /// Batched `a @ b`: `[B, R, S] x [B, S, D] -> [B, R, D]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, r, s) = self.value(a).dims3()?;
        let (bb, s2, d) = self.value(b).dims3()?;
        if ba != bb || s != s2 {
            return shape_err(format!(
                "batch_matmul: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let mut out = vec![0.0; ba * r * d];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..ba {
            gemm(
                r,
                s,
                d,
                1.0,
                &av[i * r * s..(i + 1) * r * s],
                s,
                1,
                &bv[i * s * d..(i + 1) * s * d],
                d,
                1,
                0.0,
                &mut out[i * r * d..(i + 1) * r * d],
                d,
                1,
            );
        }
        let t = Tensor::new(vec![ba, r, d], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::BatchMatMul(a, b), ng))
    }

    /// Per group of `from` rows keep the first `to` rows, or append zero rows.
    pub fn resize_groups(&mut self, x: Var, groups: usize, from: usize, to: usize) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if n != groups * from {
            return shape_err(format!(
                "resize_groups: {:?} is not {groups} groups of {from} rows",
                self.value(x).shape()
            ));
        }
        let keep = from.min(to);
        let src = self.value(x).data();
        let mut out = vec![0.0; groups * to * c];
        for g in 0..groups {
            let s = g * from * c;
            let o = g * to * c;
            out[o..o + keep * c].copy_from_slice(&src[s..s + keep * c]);
        }
        let t = Tensor::new(vec![groups * to, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::ResizeGroups {
                x,
                groups,
                from,
                to,
            },
            ng,
        ))
    }

    /// Mean over each consecutive group of `rows` rows.
    pub fn group_mean(&mut self, x: Var, groups: usize, rows: usize) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if n != groups * rows || rows == 0 {
            return shape_err(format!(
                "group_mean: {:?} is not {groups} groups of {rows} rows",
                self.value(x).shape()
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; groups * c];
        for g in 0..groups {
            let o = &mut out[g * c..(g + 1) * c];
            for r in 0..rows {
                let s = (g * rows + r) * c;
                o.iter_mut().zip(&src[s..s + c]).for_each(|(a, b)| *a += b);
            }
            o.iter_mut().for_each(|a| *a /= rows as f64);
        }
        let t = Tensor::new(vec![groups, c], out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::GroupMean { x, groups, rows }, ng))
    }

    /// Row-wise dot products: `[n, c] . [n, c] -> [n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (n, c) = self.value(a).dims2()?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = (0..n)
            .map(|i| {
                av[i * c..(i + 1) * c]
                    .iter()
                    .zip(&bv[i * c..(i + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let t = Tensor::new(vec![n], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::RowDot(a, b), ng))
    }

    /// Multiply row `i` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if weights.len() != n {
            return shape_err(format!("scale_rows: {} weights for {n} rows", weights.len()));
        }
        let mut out = self.value(x).clone();
        for (row, w) in out.data_mut().chunks_mut(c).zip(&weights) {
            row.iter_mut().for_each(|v| *v *= w);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::ScaleRows(x, weights), ng))
    }

    /// Capsule squash per row: `v = |s|^2 / (1 + |s|^2) * s / |s|`, `v = 0` at `s = 0`.
    pub fn squash(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.value(x).dims2()?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g = squash_factor(n);
            row.iter_mut().for_each(|v| *v *= g);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Squash(x), ng))
    }

    /// Euclidean norm of each row: `[n, c] -> [n]`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        let out = (0..n)
            .map(|i| self.value(x).data()[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::new(vec![n], out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::RowNorm(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return shape_err("mean of an empty tensor");
        }
        let s = self.value(x).data().iter().sum::<f64>() / n as f64;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), ng))
    }

    /// Mean `-ln p[target]` over rows of a probability matrix (clamped at 1e-12).
    pub fn cross_entropy(&mut self, probs: Var, targets: Vec<usize>) -> Result<Var> {
        let (n, c) = self.value(probs).dims2()?;
        if targets.len() != n {
            return shape_err(format!(
                "cross_entropy: {n} prediction rows vs {} targets",
                targets.len()
            ));
        }
        if n == 0 {
            return shape_err("cross_entropy on zero rows");
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return shape_err(format!("cross_entropy: class {t} out of {c}"));
            }
            total -= self.value(probs).data()[i * c + t].max(CE_CLAMP).ln();
        }
        let ng = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::CrossEntropy(probs, targets),
            ng,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Result<Var> {
        if self.value(x).shape() != target.shape() {
            return shape_err(format!(
                "mse: {:?} vs target {:?}",
                self.value(x).shape(),
                target.shape()
            ));
        }
        let n = target.len().max(1) as f64;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Mse(x, target), ng))
    }

    /// Mean binary cross-entropy on logits, computed stably.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != targets.len() || x.is_empty() {
            return shape_err(format!(
                "bce_with_logits: {} logits vs {} targets",
                x.len(),
                targets.len()
            ));
        }
        let s = x
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / x.len() as f64;
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(s), Op::BceWithLogits(logits, targets), ng))
    }

    /// Backpropagate from a scalar root, accumulating into `store`.
    /// Returns the adjoints of every node that needed one (index = node id).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_with_inputs(loss, store).map(|_| ())
    }

    /// Like [`Tape::backward`], additionally returning adjoints keyed by node.
    pub fn backward_with_inputs(
        &self,
        loss: Var,
        store: &mut ParamStore,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(loss).len() != 1 {
            return contract_err(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.ng(loss) {
            return Ok(grads);
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads, store);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.value(v).len()]);
        }
        f(slot.as_mut().unwrap());
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate(*id, g),
            Op::MatMul(a, b) => {
                let (r, s) = self.value(*a).dims2().unwrap();
                let t = self.value(*b).cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = dC B^T, dB = A^T dC
                self.acc(grads, *a, |ga| gemm(r, t, s, 1.0, g, t, 1, bv, 1, t, 1.0, ga, s, 1));
                self.acc(grads, *b, |gb| gemm(s, r, t, 1.0, av, 1, s, g, t, 1, 1.0, gb, t, 1));
            }
            Op::SparseMatMul(x, w) => {
                let d = self.value(*w).cols();
                self.acc(grads, *w, |gw| {
                    for i in 0..x.rows() {
                        let gi = &g[i * d..(i + 1) * d];
                        for (j, v) in x.row_entries(i) {
                            gw[j * d..(j + 1) * d]
                                .iter_mut()
                                .zip(gi)
                                .for_each(|(a, b)| *a += v * b);
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                let c = self.value(*b).len();
                self.acc(grads, *x, |gx| add_into(gx, g));
                self.acc(grads, *b, |gb| {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, s) => self.acc(grads, *x, |gx| {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += s * v)
            }),
            Op::AddConst(x) => self.acc(grads, *x, |gx| add_into(gx, g)),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        let v = xv[i];
                        let t = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        gx[i] += g[i] * d;
                    }
                });
            }
            Op::Softmax(x) => {
                let c = node.value.cols().max(1);
                self.acc(grads, *x, |gx| {
                    for ((yr, gr), or) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            or[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gam = self.value(*gamma).data();
                self.acc(grads, *gamma, |gg| {
                    for (hr, gr) in xhat.chunks(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            gg[j] += hr[j] * gr[j];
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for gr in g.chunks(c) {
                        add_into(gb, gr);
                    }
                });
                self.acc(grads, *x, |gx| {
                    let n = c as f64;
                    for (r, ((hr, gr), or)) in xhat
                        .chunks(c)
                        .zip(g.chunks(c))
                        .zip(gx.chunks_mut(c))
                        .enumerate()
                    {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            or[j] += inv / n * (n * dh - s1 - hr[j] * s2);
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => self.acc(grads, *x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * mask[i];
                }
            }),
            Op::Gather(table, index) => {
                let c = node.value.cols();
                self.acc(grads, *table, |gt| {
                    for (i, ix) in index.iter().enumerate() {
                        if let Some(r) = ix {
                            add_into(&mut gt[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    }
                });
            }
            Op::SplitHeads {
                x,
                groups,
                rows,
                heads,
            } => {
                let c = self.value(*x).cols();
                let d = c / heads;
                self.acc(grads, *x, |gx| {
                    for gi in 0..*groups {
                        for r in 0..*rows {
                            for h in 0..*heads {
                                let s = (gi * rows + r) * c + h * d;
                                let o = ((gi * heads + h) * rows + r) * d;
                                add_into(&mut gx[s..s + d], &g[o..o + d]);
                            }
                        }
                    }
                });
            }
            Op::MergeHeads {
                x,
                groups,
                rows,
                heads,
            } => {
                let c = node.value.cols();
                let d = c / heads;
                self.acc(grads, *x, |gx| {
                    for gi in 0..*groups {
                        for r in 0..*rows {
                            for h in 0..*heads {
                                let o = (gi * rows + r) * c + h * d;
                                let s = ((gi * heads + h) * rows + r) * d;
                                add_into(&mut gx[s..s + d], &g[o..o + d]);
                            }
                        }
                    }
                });
            }
            Op::BatchMatMulNT(a, b) => {
                // C = A B^T: dA = dC B, dB = dC^T A
                let (bn, r, d) = self.value(*a).dims3().unwrap();
                let s = self.value(*b).dims3().unwrap().1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for i in 0..bn {
                        gemm(
                            r,
                            s,
                            d,
                            1.0,
                            &g[i * r * s..(i + 1) * r * s],
                            s,
                            1,
                            &bv[i * s * d..(i + 1) * s * d],
                            d,
                            1,
                            1.0,
                            &mut ga[i * r * d..(i + 1) * r * d],
                            d,
                            1,
                        );
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..bn {
                        gemm(
                            s,
                            r,
                            d,
                            1.0,
                            &g[i * r * s..(i + 1) * r * s],
                            1,
                            s,
                            &av[i * r * d..(i + 1) * r * d],
                            d,
                            1,
                            1.0,
                            &mut gb[i * s * d..(i + 1) * s * d],
                            d,
                            1,
                        );
                    }
                });
            }
            Op::BatchMatMul(a, b) => {
                // C = A B: dA = dC B^T, dB = A^T dC
                let (bn, r, s) = self.value(*a).dims3().unwrap();
                let d = self.value(*b).dims3().unwrap().2;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for i in 0..bn {
                        gemm(
                            r,
                            d,
                            s,
                            1.0,
                            &g[i * r * d..(i + 1) * r * d],
                            d,
                            1,
                            &bv[i * s * d..(i + 1) * s * d],
                            1,
                            d,
                            1.0,
                            &mut ga[i * r * s..(i + 1) * r * s],
                            s,
                            1,
                        );
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..bn {
                        gemm(
                            s,
                            r,
                            d,
                            1.0,
                            &av[i * r * s..(i + 1) * r * s],
                            1,
                            s,
                            &g[i * r * d..(i + 1) * r * d],
                            d,
                            1,
                            1.0,
                            &mut gb[i * s * d..(i + 1) * s * d],
                            d,
                            1,
                        );
                    }
                });
            }
            Op::ResizeGroups {
                x,
                groups,
                from,
                to,
            } => {
                let c = node.value.cols();
                let keep = (*from).min(*to);
                self.acc(grads, *x, |gx| {
                    for gi in 0..*groups {
                        let s = gi * from * c;
                        let o = gi * to * c;
                        add_into(&mut gx[s..s + keep * c], &g[o..o + keep * c]);
                    }
                });
            }
            Op::GroupMean { x, groups, rows } => {
                let c = node.value.cols();
                let inv = 1.0 / *rows as f64;
                self.acc(grads, *x, |gx| {
                    for gi in 0..*groups {
                        let gr = &g[gi * c..(gi + 1) * c];
                        for r in 0..*rows {
                            let s = (gi * rows + r) * c;
                            gx[s..s + c]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(o, v)| *o += v * inv);
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let c = self.value(*a).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for (i, gi) in g.iter().enumerate() {
                        for j in 0..c {
                            ga[i * c + j] += gi * bv[i * c + j];
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        for j in 0..c {
                            gb[i * c + j] += gi * av[i * c + j];
                        }
                    }
                });
            }
            Op::ScaleRows(x, w) => {
                let c = node.value.cols();
                self.acc(grads, *x, |gx| {
                    for (i, wi) in w.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += g[i * c + j] * wi;
                        }
                    }
                });
            }
            Op::Squash(x) => {
                let c = node.value.cols();
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for ((sr, gr), or) in xv.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let n = sr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let f = squash_factor(n);
                        let n2 = n * n;
                        let df = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                        let sa: f64 = sr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            or[j] += f * gr[j] + sa * df / n * sr[j];
                        }
                    }
                });
            }
            Op::RowNorm(x) => {
                let c = self.value(*x).cols();
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for (i, gi) in g.iter().enumerate() {
                        if y[i] > 0.0 {
                            for j in 0..c {
                                gx[i * c + j] += gi * xv[i * c + j] / y[i];
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::CrossEntropy(p, targets) => {
                let c = self.value(*p).cols();
                let pv = self.value(*p).data();
                let n = targets.len() as f64;
                self.acc(grads, *p, |gp| {
                    for (i, &t) in targets.iter().enumerate() {
                        let pr = pv[i * c + t];
                        if pr > CE_CLAMP {
                            gp[i * c + t] -= g[0] / (n * pr);
                        }
                    }
                });
            }
            Op::Mse(x, target) => {
                let xv = self.value(*x).data();
                let n = target.len().max(1) as f64;
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[0] * 2.0 * (xv[i] - target.data()[i]) / n;
                    }
                });
            }
            Op::BceWithLogits(x, targets) => {
                let xv = self.value(*x).data();
                let n = targets.len() as f64;
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[0] * (sigmoid(xv[i]) - targets[i]) / n;
                    }
                });
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// `|s| / (1 + |s|^2)`, the factor that maps `s` to its squashed vector.
pub(crate) fn squash_factor(norm: f64) -> f64 {
    norm / (1.0 + norm * norm)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s = tape.sum(p);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(id).grad.as_deref(), Some(&[1.0, 1.0, 1.0][..]));
    }

    #[test]
    fn half_squared_norm_gradient_is_theta() {
        let mut store = ParamStore::new();
        let theta = vec![0.5, -1.0, 2.0];
        let id = store.insert("theta", Tensor::new(vec![3], theta.clone()).unwrap()).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        tape.backward(half, &mut store).unwrap();
        assert_eq!(store.get(id).grad.as_deref(), Some(theta.as_slice()));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s = tape.sum(p);
        tape.backward(s, &mut store).unwrap();
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(id).grad.as_deref(), Some(&[2.0, 2.0][..]));
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(G5Error::Contract(_))
        ));
    }

    #[test]
    fn squash_norm_below_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap());
        let v = tape.squash(x).unwrap();
        let out = tape.value(v);
        let n0 = (out.get2(0, 0).powi(2) + out.get2(0, 1).powi(2)).sqrt();
        assert!((n0 - 25.0 / 26.0).abs() < 1e-12);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }
}
