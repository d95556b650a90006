use super::Tensor;

/// Compressed sparse rows, used for the (mostly binary) raw feature matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub(crate) cols: usize,
    pub(crate) offsets: Vec<usize>,
    pub(crate) indices: Vec<usize>,
    pub(crate) values: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(t: &Tensor) -> Self {
        let cols = t.cols();
        let mut s = SparseRows {
            cols,
            offsets: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for i in 0..t.rows() {
            s.push_row(t.row(i));
        }
        s
    }

    fn push_row(&mut self, row: &[f64]) {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.indices.push(j);
                self.values.push(v);
            }
        }
        self.offsets.push(self.indices.len());
    }

    /// New matrix holding the selected rows, in order.
    pub fn select(&self, rows: &[usize]) -> SparseRows {
        let mut s = SparseRows {
            cols: self.cols,
            offsets: Vec::with_capacity(rows.len() + 1),
            indices: Vec::new(),
            values: Vec::new(),
        };
        s.offsets.push(0);
        for &r in rows {
            let (a, b) = (self.offsets[r], self.offsets[r + 1]);
            s.indices.extend_from_slice(&self.indices[a..b]);
            s.values.extend_from_slice(&self.values[a..b]);
            s.offsets.push(s.indices.len());
        }
        s
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows(), self.cols]);
        let c = self.cols;
        for i in 0..self.rows() {
            for (j, v) in self.row_entries(i) {
                t.data_mut()[i * c + j] = v;
            }
        }
        t
    }
}
