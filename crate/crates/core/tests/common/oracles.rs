//! Independent reference implementations.

use g5::graph::GraphDataset;
use g5::tensor::Tensor;

pub const ALPHA: f64 = 0.15;
pub const INTIMACY_TOL: f64 = 1e-8;

pub fn graph(n: usize, edges: &[(usize, usize)]) -> GraphDataset {
    GraphDataset::new(
        "p",
        (0..n).map(|i| i.to_string()).collect(),
        Tensor::zeros(&[n, 1]),
        vec![None; n],
        vec!["c".into()],
        edges.iter().copied(),
    )
    .unwrap()
}

pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for &(u, v) in edges {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// `alpha (I - (1 - alpha) A D^-1)^-1` by Gauss-Jordan elimination, with an
/// isolated node treated as stepping to itself.
pub fn intimacy_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let a = adjacency(n, edges);
    let deg: Vec<usize> = (0..n).map(|j| a[j].iter().filter(|&&x| x).count()).collect();
    let mut m = vec![vec![0.0; 2 * n]; n];
    for i in 0..n {
        for j in 0..n {
            let t = if deg[j] == 0 {
                f64::from(u8::from(i == j))
            } else if a[i][j] {
                1.0 / deg[j] as f64
            } else {
                0.0
            };
            m[i][j] = f64::from(u8::from(i == j)) - (1.0 - ALPHA) * t;
        }
        m[i][n + i] = 1.0;
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let d = m[c][c];
        m[c].iter_mut().for_each(|x| *x /= d);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot = m[c].clone();
                m[r].iter_mut().zip(&pivot).for_each(|(x, y)| *x -= f * y);
            }
        }
    }
    m.into_iter().map(|row| row[n..].iter().map(|x| ALPHA * x).collect()).collect()
}

pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v) in edges {
        d[u][v] = 1;
        d[v][u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

