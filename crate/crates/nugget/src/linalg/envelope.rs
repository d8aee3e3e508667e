//! Envelope (profile) Cholesky after reverse Cuthill–McKee reordering.
//!
//! Used for log-determinants and exact solves of tapered correlation
//! matrices, whose banded structure after reordering keeps fill small.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::sparse::Csr;

/// Reverse Cuthill–McKee permutation: `perm[new] = old`.
pub fn rcm_ordering(a: &Csr) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.sort_by_key(|&i| degree[i]);
    for &start in &nodes {
        if visited[start] {
            continue;
        }
        let root = peripheral(a, start, &degree);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).0.iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| degree[u]);
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node search by repeated breadth-first sweeps.
fn peripheral(a: &Csr, start: usize, degree: &[usize]) -> usize {
    let mut root = start;
    let mut depth = 0;
    for _ in 0..8 {
        let (levels, last) = bfs_levels(a, root);
        if levels <= depth {
            break;
        }
        depth = levels;
        root = *last.iter().min_by_key(|&&u| degree[u]).unwrap_or(&root);
    }
    root
}

fn bfs_levels(a: &Csr, root: usize) -> (usize, Vec<usize>) {
    let n = a.n();
    let mut level = vec![usize::MAX; n];
    level[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in a.row(v).0 {
                if level[u] == usize::MAX {
                    level[u] = depth + 1;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

/// Lower envelope factor of `P (A + shift·I) Pᵀ`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &Csr, shift: f64, perm: &[usize]) -> Result<Self> {
        let n = a.n();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0usize; n];
        for (i, f) in first.iter_mut().enumerate() {
            let cols = a.row(perm[i]).0;
            *f = cols.iter().map(|&c| inv[c]).filter(|&c| c <= i).min().unwrap_or(i);
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            let s = start[i] + (i - first[i] + 1);
            start.push(s);
        }
        let mut values = vec![0.0; start[n]];
        for i in 0..n {
            let (cols, vals) = a.row(perm[i]);
            for (c, v) in cols.iter().zip(vals) {
                let j = inv[*c];
                if j <= i {
                    values[start[i] + j - first[i]] = *v;
                }
            }
            values[start[i] + i - first[i]] += shift;
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = values[start[i] + j - fi];
                let ri = &values[start[i] + k0 - fi..start[i] + j - fi];
                let rj = &values[start[j] + k0 - fj..start[j] + j - fj];
                for (x, y) in ri.iter().zip(rj) {
                    s -= x * y;
                }
                values[start[i] + j - fi] = s / values[start[j] + j - fj];
            }
            let row = &values[start[i]..start[i] + i - fi];
            let d = values[start[i] + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::Numeric(format!("sparse matrix is not positive definite (pivot {i} of {n})")));
            }
            values[start[i] + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { perm: perm.to_vec(), first, start, values })
    }

    fn diag(&self, i: usize) -> f64 {
        self.values[self.start[i] + i - self.first[i]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.perm.len()).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i] + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.diag(i);
        }
        for i in (0..n).rev() {
            y[i] /= self.diag(i);
            let fi = self.first[i];
            let xi = y[i];
            let row = &self.values[self.start[i]..self.start[i] + i - fi];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
