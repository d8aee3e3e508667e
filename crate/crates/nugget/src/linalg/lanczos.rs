//! Extreme eigenvalues of a symmetric operator by Lanczos with full
//! reorthogonalization.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::sum::dot;

/// Converged extreme Ritz values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RitzExtremes {
    pub min: f64,
    pub max: f64,
    pub iterations: usize,
}

/// Largest and smallest eigenvalue of the operator `apply`, each to relative
/// accuracy `tol` (residual-norm test on the Ritz pair).
pub fn lanczos_extremes<F>(n: usize, apply: F, tol: f64, max_iter: usize) -> Result<RitzExtremes>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::Input("empty operator".into()));
    }
    // Deterministic, generic start vector.
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    let qn = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= qn);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let limit = max_iter.min(n).max(1);
    let mut last_residual = f64::INFINITY;
    for k in 0..limit {
        let mut w = apply(&basis[k])?;
        let alpha = dot(&w, &basis[k]);
        alphas.push(alpha);
        // Two passes of classical Gram–Schmidt against the whole basis.
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = dot(&w, &w).sqrt();
        let m = alphas.len();
        let check = m == limit || beta <= f64::EPSILON * alpha.abs().max(1.0) || m.is_multiple_of(4) || m <= 2;
        if check {
            let t = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alphas[i]
                } else if i + 1 == j {
                    betas[i]
                } else if j + 1 == i {
                    betas[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (imin, imax) = extreme_indices(eig.eigenvalues.as_slice());
            let (lmin, lmax) = (eig.eigenvalues[imin], eig.eigenvalues[imax]);
            let scale = lmax.abs().max(lmin.abs()).max(f64::MIN_POSITIVE);
            let rmin = (beta * eig.eigenvectors[(m - 1, imin)]).abs();
            let rmax = (beta * eig.eigenvectors[(m - 1, imax)]).abs();
            last_residual = (rmin / scale).max(rmax / lmax.abs().max(f64::MIN_POSITIVE));
            let invariant = beta <= f64::EPSILON * scale * 16.0;
            if invariant || m == n || (rmax <= tol * lmax.abs() && rmin <= tol * scale) {
                return Ok(RitzExtremes { min: lmin, max: lmax, iterations: m });
            }
        }
        if k + 1 == limit {
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        betas.push(beta);
        basis.push(w);
    }
    Err(Error::Solver { iterations: limit, residual: last_residual })
}

fn extreme_indices(v: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[imin] {
            imin = i;
        }
        if *x > v[imax] {
            imax = i;
        }
    }
    (imin, imax)
}
