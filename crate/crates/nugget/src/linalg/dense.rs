//! Blocked dense Cholesky and triangular kernels on column-major storage.
//!
//! The heavy lifting is delegated to `matrixmultiply::dgemm`; the trailing
//! update and the block-column inverse are split over disjoint column blocks
//! so they parallelize without locks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par::{Parallelism, SyncPtr};

const BLOCK: usize = 96;
const UPDATE_COLS: usize = 192;

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn factor(mut a: DMatrix<f64>, par: Parallelism) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Input(format!("cholesky of a {}x{} matrix", n, a.ncols())));
        }
        factor_in_place(a.as_mut_slice(), n, par).map_err(|col| {
            Error::Numeric(format!("matrix is not positive definite (pivot {col} of {n})"))
        })?;
        for j in 1..n {
            for i in 0..j {
                a[(i, j)] = 0.0;
            }
        }
        Ok(Cholesky { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>, par: Parallelism) {
        self.forward_in_place(b, par);
        self.backward_in_place(b, par);
    }

    pub fn solve(&self, b: &DMatrix<f64>, par: Parallelism) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x, par);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let n = self.dim();
        lower_solve_col(self.l.as_slice(), n, x.as_mut_slice());
        lower_t_solve_col(self.l.as_slice(), n, x.as_mut_slice());
        x
    }

    /// Overwrites `b` with `L⁻¹ b`.
    pub fn forward_in_place(&self, b: &mut DMatrix<f64>, par: Parallelism) {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        let l = self.l.as_slice();
        par.chunks_mut(b.as_mut_slice(), n, |_, col| lower_solve_col(l, n, col));
    }

    /// Overwrites `b` with `L⁻ᵀ b`.
    pub fn backward_in_place(&self, b: &mut DMatrix<f64>, par: Parallelism) {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        let l = self.l.as_slice();
        par.chunks_mut(b.as_mut_slice(), n, |_, col| lower_t_solve_col(l, n, col));
    }

    /// Explicit `L⁻¹`, computed one column block at a time.
    pub fn inverse_factor(&self, par: Parallelism) -> DMatrix<f64> {
        let n = self.dim();
        let mut x = DMatrix::<f64>::zeros(n, n);
        let l = self.l.as_slice();
        let nblocks = n.div_ceil(BLOCK);
        let ptr = SyncPtr(x.as_mut_slice().as_mut_ptr());
        par.for_each(nblocks, |jb| {
            let c0 = jb * BLOCK;
            let c1 = (c0 + BLOCK).min(n);
            // SAFETY: each task writes only columns c0..c1 of `x`.
            unsafe { inverse_block_columns(l, n, ptr.get(), c0, c1) };
        });
        x
    }

    /// `trace(A⁻¹) = ‖L⁻¹‖²_F`.
    pub fn trace_inverse(&self, par: Parallelism) -> f64 {
        frobenius_sq(&self.inverse_factor(par))
    }

    /// Explicit `A⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self, par: Parallelism) -> DMatrix<f64> {
        let li = self.inverse_factor(par);
        let n = self.dim();
        let mut out = DMatrix::<f64>::zeros(n, n);
        gemm_tn(&li, &li, &mut out, par);
        out
    }
}

pub fn frobenius_sq(a: &DMatrix<f64>) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum()
}

/// `c = aᵀ b`, split over column blocks of `c`.
pub fn gemm_tn(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &mut DMatrix<f64>, par: Parallelism) {
    let (k, m) = (a.nrows(), a.ncols());
    let n = b.ncols();
    assert_eq!(b.nrows(), k);
    assert_eq!((c.nrows(), c.ncols()), (m, n));
    let pa = a.as_slice().as_ptr() as usize;
    let pb = b.as_slice().as_ptr() as usize;
    let pc = SyncPtr(c.as_mut_slice().as_mut_ptr());
    let nblocks = n.div_ceil(UPDATE_COLS);
    par.for_each(nblocks, |jb| {
        let c0 = jb * UPDATE_COLS;
        let w = UPDATE_COLS.min(n - c0);
        // SAFETY: disjoint output column blocks; inputs are read-only.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                w,
                1.0,
                pa as *const f64,
                k as isize,
                1,
                (pb as *const f64).add(c0 * k),
                1,
                k as isize,
                0.0,
                pc.get().add(c0 * m),
                1,
                m as isize,
            );
        }
    });
}

/// Column-major blocked right-looking Cholesky. Returns the failing pivot on breakdown.
pub(crate) fn factor_in_place(a: &mut [f64], n: usize, par: Parallelism) -> std::result::Result<(), usize> {
    let lda = n;
    let mut k = 0;
    while k < n {
        let b = BLOCK.min(n - k);
        factor_diag_block(a, lda, k, b)?;
        let r = n - k - b;
        if r > 0 {
            panel_solve(a, lda, k, b, n, par);
            trailing_update(a, lda, k, b, n, par);
        }
        k += b;
    }
    Ok(())
}

fn factor_diag_block(a: &mut [f64], lda: usize, off: usize, b: usize) -> std::result::Result<(), usize> {
    for j in 0..b {
        let cj = (off + j) * lda + off;
        let mut d = a[cj + j];
        for p in 0..j {
            let v = a[(off + p) * lda + off + j];
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(off + j);
        }
        let d = d.sqrt();
        a[cj + j] = d;
        for i in j + 1..b {
            let mut s = a[cj + i];
            for p in 0..j {
                let cp = (off + p) * lda + off;
                s -= a[cp + i] * a[cp + j];
            }
            a[cj + i] = s / d;
        }
    }
    Ok(())
}

/// `A21 ← A21 L11⁻ᵀ`, split over row chunks.
fn panel_solve(a: &mut [f64], lda: usize, k: usize, b: usize, n: usize, par: Parallelism) {
    let r0 = k + b;
    let rows = n - r0;
    let chunk = 256usize;
    let nchunks = rows.div_ceil(chunk);
    let ptr = SyncPtr(a.as_mut_ptr());
    par.for_each(nchunks, |ci| {
        let i0 = r0 + ci * chunk;
        let i1 = (i0 + chunk).min(n);
        let p = ptr.get();
        // SAFETY: tasks own disjoint row ranges of the panel; the diagonal
        // block is only read.
        unsafe {
            for j in 0..b {
                let cj = p.add((k + j) * lda);
                for jj in 0..j {
                    let ljj = *p.add((k + jj) * lda + k + j);
                    if ljj != 0.0 {
                        let cjj = p.add((k + jj) * lda);
                        for i in i0..i1 {
                            *cj.add(i) -= ljj * *cjj.add(i);
                        }
                    }
                }
                let d = *p.add((k + j) * lda + k + j);
                for i in i0..i1 {
                    *cj.add(i) /= d;
                }
            }
        }
    });
}

/// `A22 ← A22 − A21 A21ᵀ`, lower part only, one column block per task.
fn trailing_update(a: &mut [f64], lda: usize, k: usize, b: usize, n: usize, par: Parallelism) {
    let r0 = k + b;
    let rem = n - r0;
    let nblocks = rem.div_ceil(UPDATE_COLS);
    let ptr = SyncPtr(a.as_mut_ptr());
    par.for_each(nblocks, |jb| {
        let c0 = r0 + jb * UPDATE_COLS;
        let c1 = (c0 + UPDATE_COLS).min(n);
        let p = ptr.get();
        // SAFETY: output columns c0..c1 are disjoint across tasks and disjoint
        // from the panel columns k..k+b that are read.
        unsafe {
            let a21 = p.add(k * lda + c0);
            matrixmultiply::dgemm(
                n - c0,
                b,
                c1 - c0,
                -1.0,
                a21,
                1,
                lda as isize,
                a21,
                lda as isize,
                1,
                1.0,
                p.add(c0 * lda + c0),
                1,
                lda as isize,
            );
        }
    });
}

/// Columns c0..c1 of `L⁻¹` written into `x` (zero-initialized, n×n).
unsafe fn inverse_block_columns(l: &[f64], n: usize, x: *mut f64, c0: usize, c1: usize) {
    let w = c1 - c0;
    for j in 0..w {
        *x.add((c0 + j) * n + c0 + j) = 1.0;
    }
    let mut r = c0;
    while r < n {
        let rb = BLOCK.min(n - r);
        // Solve the diagonal block: X[r..r+rb, :] = L_rr⁻¹ X[r..r+rb, :].
        for j in 0..w {
            let col = x.add((c0 + j) * n);
            for i in r..r + rb {
                let mut s = *col.add(i);
                for p in r..i {
                    s -= l[p * n + i] * *col.add(p);
                }
                *col.add(i) = s / l[i * n + i];
            }
        }
        let below = n - r - rb;
        if below > 0 {
            matrixmultiply::dgemm(
                below,
                rb,
                w,
                -1.0,
                l.as_ptr().add(r * n + r + rb),
                1,
                n as isize,
                x.add(c0 * n + r),
                1,
                n as isize,
                1.0,
                x.add(c0 * n + r + rb),
                1,
                n as isize,
            );
        }
        r += rb;
    }
}

fn lower_solve_col(l: &[f64], n: usize, x: &mut [f64]) {
    for j in 0..n {
        let xj = x[j] / l[j * n + j];
        x[j] = xj;
        if xj != 0.0 {
            let col = &l[j * n + j + 1..(j + 1) * n];
            for (xi, lij) in x[j + 1..].iter_mut().zip(col) {
                *xi -= lij * xj;
            }
        }
    }
}

fn lower_t_solve_col(l: &[f64], n: usize, x: &mut [f64]) {
    for j in (0..n).rev() {
        let col = &l[j * n + j + 1..(j + 1) * n];
        let s: f64 = col.iter().zip(&x[j + 1..]).map(|(a, b)| a * b).sum();
        x[j] = (x[j] - s) / l[j * n + j];
    }
}

/// Symmetric eigenvalues in ascending order.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Symmetric matrix-vector product `y = a x` using the full storage.
pub fn matvec(a: &DMatrix<f64>, x: &[f64], par: Parallelism) -> Vec<f64> {
    let n = a.nrows();
    // Symmetric, so row i equals column i: contiguous dot products.
    let s = a.as_slice();
    par.map(n, |i| s[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum())
}
