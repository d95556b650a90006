//! Dense row-major tensors, a reverse-mode tape, parameter storage and Adam.
//!
//! Everything is `f64`. Shapes are plain `Vec<usize>`; the tape ops document
//! which rank they expect.

mod adam;
mod init;
mod params;
mod sparse;
mod tape;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use init::{derived_rng, xavier_uniform};
pub use params::{Param, ParamId, ParamStore};
pub use sparse::SparseRows;
pub use tape::{Tape, Var};

use crate::error::{shape_err, G5Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) && !data.is_empty() {
            return shape_err(format!("zero-sized dimension in {shape:?} with {} values", data.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension of a matrix.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Plain (non-recorded) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (r, s) = self.dims2()?;
        let (s2, t) = other.dims2()?;
        if s != s2 {
            return shape_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            ));
        }
        let mut out = vec![0.0; r * t];
        gemm(r, s, t, 1.0, &self.data, s, 1, &other.data, t, 1, 0.0, &mut out, t, 1);
        Tensor::new(vec![r, t], out)
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(G5Error::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [b, r, c] => Ok((*b, *r, *c)),
            _ => Err(G5Error::Shape(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `c = alpha * a @ b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-wise softmax over the last dimension with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(G5Error::Numeric("softmax input contains NaN".into()));
    }
    let c = x.cols();
    let mut out = x.data.clone();
    for row in out.chunks_mut(c.max(1)) {
        softmax_in_place(row);
    }
    Tensor::new(x.shape.clone(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean over rows of `-ln p[target]`, probabilities clamped below at 1e-12.
pub fn cross_entropy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let (r, c) = pred.dims2()?;
    let (tr, tc) = target.dims2()?;
    if r != tr || c != tc {
        return shape_err(format!(
            "cross_entropy: prediction {:?} vs target {:?}",
            pred.shape, target.shape
        ));
    }
    if r == 0 {
        return shape_err("cross_entropy on zero rows");
    }
    let mut total = 0.0;
    for i in 0..r {
        let t = argmax(target.row(i));
        total -= pred.get2(i, t).max(CE_CLAMP).ln();
    }
    Ok(total / r as f64)
}

pub(crate) const CE_CLAMP: f64 = 1e-12;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_identity_and_small_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
        let r = Tensor::from_rows(&[vec![1.0, 2.0]])
            .unwrap()
            .matmul(&Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap())
            .unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[vec![1000.0; 3]]).unwrap()).unwrap();
        for v in s.data() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap()).unwrap();
        assert_relative_eq!(s.data()[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(s.data()[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        let t = Tensor::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert!(matches!(softmax_rows(&t), Err(G5Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let one_hot = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let perfect = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&perfect, &one_hot).unwrap(), 0.0);
        let half = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_relative_eq!(cross_entropy(&half, &one_hot).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let half2 = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let one_hot2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            cross_entropy(&half2, &one_hot2).unwrap(),
            cross_entropy(&half, &one_hot).unwrap()
        );
        assert!(matches!(cross_entropy(&half2, &one_hot), Err(G5Error::Shape(_))));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }
}
