//! Solves with `K_η = K + ηI`, the action of
//! `M₁,η = K_η⁻¹ − K_η⁻¹X(XᵀK_η⁻¹X)⁻¹XᵀK_η⁻¹`, the GLS coefficients and
//! `trace(M₁,η)`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernels::{CorrelationMatrix, CorrelationStorage};
use crate::linalg::envelope::{rcm_ordering, EnvelopeCholesky};
use crate::linalg::sparse::conjugate_gradient;
use crate::linalg::sum::dot;
use crate::linalg::{Cholesky, Csr};
use crate::model::GpModel;
use crate::par::Parallelism;
use crate::trace::TraceProvider;

/// Largest dense problem solved by Cholesky when the method is chosen
/// automatically.
pub const DENSE_LIMIT: usize = 4096;
pub const CG_TOL: f64 = 1e-10;

/// How `K_η u = b` is solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    DenseCholesky,
    ConjugateGradient { tol: f64, max_iter: usize },
}

impl SolverMethod {
    /// Cholesky for dense `K`, conjugate gradients for tapered `K`.
    pub fn auto(k: &CorrelationMatrix) -> Self {
        if k.is_sparse() || k.n() > DENSE_LIMIT {
            SolverMethod::ConjugateGradient { tol: CG_TOL, max_iter: 10 * k.n().max(10) }
        } else {
            SolverMethod::DenseCholesky
        }
    }
}

/// Solver state for one estimation run: method, parallelism, the jitter
/// decision and the cached fill-reducing ordering of sparse `K`.
#[derive(Debug)]
pub struct Solver {
    method: SolverMethod,
    par: Parallelism,
    jitter: Mutex<f64>,
    ordering: OnceLock<Vec<usize>>,
    factorizations: AtomicUsize,
}

impl Clone for Solver {
    fn clone(&self) -> Self {
        Solver {
            method: self.method,
            par: self.par,
            jitter: Mutex::new(self.jitter()),
            ordering: self.ordering.clone(),
            factorizations: AtomicUsize::new(0),
        }
    }
}

impl Solver {
    pub fn new(method: SolverMethod, par: Parallelism) -> Self {
        Solver {
            method,
            par,
            jitter: Mutex::new(0.0),
            ordering: OnceLock::new(),
            factorizations: AtomicUsize::new(0),
        }
    }

    /// Method picked from the storage of `K`.
    pub fn auto(model: &GpModel, par: Parallelism) -> Self {
        Solver::new(SolverMethod::auto(model.k()), par)
    }

    pub fn method(&self) -> SolverMethod {
        self.method
    }

    pub fn parallelism(&self) -> Parallelism {
        self.par
    }

    /// Diagonal jitter currently added to every `K_η` (0 unless a
    /// factorization broke down).
    pub fn jitter(&self) -> f64 {
        *self.jitter.lock().expect("jitter lock")
    }

    /// Number of `K_η` factorizations (or CG systems) set up so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    fn jitter_size(n: usize) -> f64 {
        (n as f64 * f64::EPSILON).max(1e-10)
    }

    /// Prepares `K + (η + jitter)I` for solves.
    pub fn factor<'a>(&'a self, k: &'a CorrelationMatrix, eta: f64) -> Result<KEtaFactor<'a>> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return input(format!("eta must be finite and non-negative, got {eta}"));
        }
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        match self.method {
            SolverMethod::DenseCholesky => {
                let dense = match &k.storage {
                    CorrelationStorage::Dense(d) => std::borrow::Cow::Borrowed(d),
                    CorrelationStorage::Sparse(s) => std::borrow::Cow::Owned(s.to_dense()),
                };
                let attempt = |shift: f64| {
                    let mut a = dense.as_ref().clone();
                    for i in 0..a.nrows() {
                        a[(i, i)] += shift;
                    }
                    Cholesky::factor(a, self.par)
                };
                let jitter = self.jitter();
                match attempt(eta + jitter) {
                    Ok(chol) => Ok(KEtaFactor::Dense { chol, shift: eta + jitter, par: self.par }),
                    Err(first) if jitter == 0.0 => {
                        let j = Solver::jitter_size(k.n());
                        let chol = attempt(eta + j).map_err(|_| first)?;
                        *self.jitter.lock().expect("jitter lock") = j;
                        Ok(KEtaFactor::Dense { chol, shift: eta + j, par: self.par })
                    }
                    Err(e) => Err(e),
                }
            }
            SolverMethod::ConjugateGradient { tol, max_iter } => {
                let CorrelationStorage::Sparse(csr) = &k.storage else {
                    return input("conjugate gradients need a tapered (sparse) correlation matrix");
                };
                let ordering = self.ordering.get_or_init(|| rcm_ordering(csr));
                Ok(KEtaFactor::Sparse {
                    k: csr,
                    shift: eta + self.jitter(),
                    tol,
                    max_iter,
                    ordering,
                    envelope: OnceLock::new(),
                    par: self.par,
                    solver: self,
                })
            }
        }
    }
}

/// A prepared `K_η`: either a dense Cholesky factor or a sparse matrix solved
/// by conjugate gradients, with an envelope factorization built on demand
/// for the log-determinant.
#[derive(Debug)]
pub enum KEtaFactor<'a> {
    Dense {
        chol: Cholesky,
        shift: f64,
        par: Parallelism,
    },
    Sparse {
        k: &'a Csr,
        shift: f64,
        tol: f64,
        max_iter: usize,
        ordering: &'a [usize],
        envelope: OnceLock<EnvelopeCholesky>,
        par: Parallelism,
        solver: &'a Solver,
    },
}

impl<'a> KEtaFactor<'a> {
    pub fn n(&self) -> usize {
        match self {
            KEtaFactor::Dense { chol, .. } => chol.dim(),
            KEtaFactor::Sparse { k, .. } => k.n(),
        }
    }

    /// The diagonal shift actually applied (η plus any jitter).
    pub fn shift(&self) -> f64 {
        match self {
            KEtaFactor::Dense { shift, .. } | KEtaFactor::Sparse { shift, .. } => *shift,
        }
    }

    /// `K_η⁻¹B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            KEtaFactor::Dense { chol, par, .. } => Ok(chol.solve(b, *par)),
            KEtaFactor::Sparse { k, shift, tol, max_iter, par, .. } => {
                let n = k.n();
                let cols: Vec<Result<Vec<f64>>> = par.map(b.ncols(), |j| {
                    let rhs: Vec<f64> = b.column(j).iter().copied().collect();
                    // Columns already run in parallel; keep each CG sequential.
                    conjugate_gradient(k, *shift, &rhs, *tol, *max_iter, Parallelism::Sequential).map(|(x, _)| x)
                });
                let mut out = DMatrix::zeros(n, b.ncols());
                for (j, col) in cols.into_iter().enumerate() {
                    out.column_mut(j).copy_from_slice(&col?);
                }
                Ok(out)
            }
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            KEtaFactor::Dense { chol, .. } => Ok(chol.solve_vec(b)),
            KEtaFactor::Sparse { k, shift, tol, max_iter, par, .. } => {
                let (x, _) = conjugate_gradient(k, *shift, b.as_slice(), *tol, *max_iter, *par)?;
                Ok(DVector::from_vec(x))
            }
        }
    }

    /// `log det K_η`.
    pub fn log_det(&self) -> Result<f64> {
        match self {
            KEtaFactor::Dense { chol, .. } => Ok(chol.log_det()),
            KEtaFactor::Sparse { k, shift, ordering, envelope, solver, .. } => {
                if let Some(e) = envelope.get() {
                    return Ok(e.log_det());
                }
                let e = match EnvelopeCholesky::factor(k, *shift, ordering) {
                    Ok(e) => e,
                    Err(first) => {
                        if solver.jitter() != 0.0 {
                            return Err(first);
                        }
                        let j = Solver::jitter_size(k.n());
                        let e = EnvelopeCholesky::factor(k, *shift + j, ordering).map_err(|_| first)?;
                        *solver.jitter.lock().expect("jitter lock") = j;
                        e
                    }
                };
                Ok(envelope.get_or_init(|| e).log_det())
            }
        }
    }

    /// The dense Cholesky factor, when there is one.
    pub fn cholesky(&self) -> Option<&Cholesky> {
        match self {
            KEtaFactor::Dense { chol, .. } => Some(chol),
            KEtaFactor::Sparse { .. } => None,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        match self {
            KEtaFactor::Dense { par, .. } | KEtaFactor::Sparse { par, .. } => *par,
        }
    }
}

/// Everything derived from one `K_η` that the likelihood needs: `u = K_η⁻¹z`,
/// `Y = K_η⁻¹X`, the Cholesky factor of `B = XᵀY`, and `w = M₁,η z`.
pub struct EtaSystem<'a> {
    model: &'a GpModel,
    eta: f64,
    factor: KEtaFactor<'a>,
    y: DMatrix<f64>,
    b: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    w: DVector<f64>,
}

impl<'a> EtaSystem<'a> {
    pub fn new(model: &'a GpModel, solver: &'a Solver, eta: f64) -> Result<Self> {
        let factor = solver.factor(model.k(), eta)?;
        let n = model.n();
        let m = model.m();
        let mut rhs = DMatrix::zeros(n, m + 1);
        rhs.column_mut(0).copy_from(model.z());
        rhs.columns_mut(1, m).copy_from(model.x());
        let sol = factor.solve(&rhs)?;
        let u = sol.column(0).into_owned();
        let y = sol.columns(1, m).into_owned();
        let b = symmetric_cholesky(model.x().transpose() * &y)?;
        let ytz = y.transpose() * model.z();
        let w = &u - &y * b.solve(&ytz);
        Ok(EtaSystem { model, eta, factor, y, b, w })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn factor(&self) -> &KEtaFactor<'a> {
        &self.factor
    }

    /// `w = M₁,η z`.
    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    /// `Y = K_η⁻¹X`.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// `M₁,η V` for a block of vectors.
    pub fn apply_m1(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let kv = self.factor.solve(v)?;
        let coef = self.b.solve(&(self.y.transpose() * v));
        Ok(kv - &self.y * coef)
    }

    pub fn apply_m1_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let kv = self.factor.solve_vec(v)?;
        let coef = self.b.solve(&(self.y.transpose() * v));
        Ok(kv - &self.y * coef)
    }

    /// `β̂ = (XᵀK_η⁻¹X)⁻¹XᵀK_η⁻¹z`.
    pub fn beta(&self) -> DVector<f64> {
        self.b.solve(&(self.y.transpose() * self.model.z()))
    }

    /// `zᵀM₁,η z` with compensated summation.
    pub fn z_m1_z(&self) -> f64 {
        dot(self.model.z().as_slice(), self.w.as_slice())
    }

    /// `log det K_η`.
    pub fn log_det_k(&self) -> Result<f64> {
        self.factor.log_det()
    }

    /// `log det(XᵀK_η⁻¹X)`.
    pub fn log_det_b(&self) -> f64 {
        2.0 * self.b.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `trace(M₁,η)` from `trace(K_η⁻¹)`.
    pub fn trace_m1(&self, trace_k_inv: f64) -> f64 {
        let yty = self.y.transpose() * &self.y;
        trace_m1_correction(trace_k_inv, &self.b.solve(&yty))
    }

    /// `trace(M₁,η²)` from `trace(K_η⁻²)`: with `A = K_η⁻¹`,
    /// `tr(A²) − 2 tr(B⁻¹YᵀAY) + tr((B⁻¹YᵀY)²)`.
    pub fn trace_m1_sq(&self, trace_k_inv_sq: f64) -> Result<f64> {
        let z = self.factor.solve(&self.y)?;
        let yay = self.y.transpose() * z;
        let c = self.b.solve(&(self.y.transpose() * &self.y));
        let mid = self.b.solve(&yay).trace();
        Ok(trace_k_inv_sq - 2.0 * mid + (&c * &c).trace())
    }
}

fn trace_m1_correction(trace_k_inv: f64, c: &DMatrix<f64>) -> f64 {
    trace_k_inv - c.trace()
}

/// Cholesky of an m×m matrix that is symmetric up to rounding.
fn symmetric_cholesky(b: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let sym = (&b + b.transpose()) * 0.5;
    sym.cholesky()
        .ok_or_else(|| Error::Model("XᵀK_η⁻¹X is singular; the design is rank deficient under this kernel".into()))
}

/// `K_η⁻¹B`.
pub fn solve_k_eta(model: &GpModel, eta: f64, b: &DMatrix<f64>, solver: &Solver) -> Result<DMatrix<f64>> {
    if b.nrows() != model.n() {
        return input(format!("right-hand side has {} rows, expected {}", b.nrows(), model.n()));
    }
    solver.factor(model.k(), eta)?.solve(b)
}

/// `w = M₁,η z`.
pub fn m1_apply(model: &GpModel, eta: f64, solver: &Solver) -> Result<DVector<f64>> {
    Ok(EtaSystem::new(model, solver, eta)?.w)
}

/// Generalized least-squares coefficients; `σ²` cancels so only `η` matters.
pub fn beta_gls(model: &GpModel, eta: f64, solver: &Solver) -> Result<DVector<f64>> {
    Ok(EtaSystem::new(model, solver, eta)?.beta())
}

/// `trace(M₁,η)` with `trace(K_η⁻¹)` from `traces`.
pub fn trace_m1(model: &GpModel, eta: f64, solver: &Solver, traces: &dyn TraceProvider) -> Result<f64> {
    let sys = EtaSystem::new(model, solver, eta)?;
    let t = traces.trace_inverse(eta, Some(sys.factor()))?;
    Ok(sys.trace_m1(t))
}

/// Explicit `M₁,η` for small dense problems.
pub fn dense_m1(model: &GpModel, eta: f64) -> Result<DMatrix<f64>> {
    let n = model.n();
    let mut k = model.k().to_dense();
    for i in 0..n {
        k[(i, i)] += eta;
    }
    let kinv = k
        .try_inverse()
        .ok_or_else(|| Error::Numeric("K + ηI is singular".into()))?;
    let y = &kinv * model.x();
    let b = symmetric_cholesky(model.x().transpose() * &y)?;
    let m1 = &kinv - &y * b.solve(&y.transpose());
    Ok((&m1 + m1.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::BasisSpec;
    use crate::kernels::{CorrelationKernel, Points};

    fn model(n: usize, seed: u64, basis: BasisSpec) -> GpModel {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let coords: Vec<f64> = (0..2 * n).map(|_| next()).collect();
        let z: Vec<f64> = (0..n).map(|_| next() - 0.5).collect();
        let pts = Points::new(2, coords).unwrap();
        GpModel::build(pts, z, basis, CorrelationKernel::exponential(0.4), Parallelism::Sequential).unwrap()
    }

    #[test]
    fn w_matches_dense_operator_and_is_orthogonal_to_x() {
        let m = model(9, 3, BasisSpec::Polynomial(1));
        let solver = Solver::new(SolverMethod::DenseCholesky, Parallelism::Sequential);
        for &eta in &[0.0, 0.3, 7.0] {
            let w = m1_apply(&m, eta, &solver).unwrap();
            let want = dense_m1(&m, eta).unwrap() * m.z();
            assert!((&w - &want).amax() < 1e-10 * want.amax().max(1.0));
            assert!((m.x().transpose() * &w).amax() < 1e-8 * w.norm());
        }
    }

    #[test]
    fn identity_kernel_solves() {
        let m = model(6, 5, BasisSpec::Polynomial(0));
        let k = CorrelationMatrix {
            storage: CorrelationStorage::Dense(DMatrix::identity(6, 6)),
            diagnostics: Default::default(),
        };
        let solver = Solver::new(SolverMethod::DenseCholesky, Parallelism::Sequential);
        let b = DMatrix::from_fn(6, 2, |i, j| (i + 3 * j) as f64);
        let x = solver.factor(&k, 2.0).unwrap().solve(&b).unwrap();
        assert!((x - &b / 3.0).amax() < 1e-14);
        drop(m);
    }
}
