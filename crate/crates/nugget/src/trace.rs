//! `trace(K_η⁻¹)` by eigenvalues, Cholesky or Hutchinson sampling, and the
//! interpolant `1/τ(η) = 1/τ₀ + Σᵢ wᵢ η^{1/(i+1)}` of the normalized trace
//! `τ(η) = trace(K_η⁻¹)/n`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{KEtaFactor, Solver, SolverMethod};
use crate::error::{input, Error, Result};
use crate::kernels::CorrelationMatrix;
use crate::linalg::dense::{frobenius_sq, symmetric_eigenvalues};
use crate::linalg::sum::{dot, Compensated};
use crate::par::Parallelism;

/// Probe count for Hutchinson estimates when none is given.
pub const DEFAULT_HUTCHINSON_VECTORS: usize = 20;
pub const DEFAULT_NODES: [f64; 5] = [1.0, 10.0, 40.0, 100.0, 1000.0];
pub const MAX_NODES: usize = 8;
/// Condition number above which a fitted interpolant carries a warning.
pub const CONDITION_WARNING: f64 = 1e12;
/// Largest `n` for which automatic selection uses the full spectrum.
pub const EIGEN_LIMIT: usize = 1024;
pub const CHOLESKY_LIMIT: usize = 8192;

/// How `trace(K_η⁻¹)` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TraceMethod {
    Eigen,
    Cholesky,
    Hutchinson { n_vectors: usize, seed: u64 },
}

impl TraceMethod {
    /// Eigenvalues for small dense `K`, Cholesky for medium dense `K`,
    /// Hutchinson otherwise.
    pub fn auto(k: &CorrelationMatrix, seed: u64) -> Self {
        if k.is_sparse() || k.n() > CHOLESKY_LIMIT {
            TraceMethod::Hutchinson { n_vectors: DEFAULT_HUTCHINSON_VECTORS, seed }
        } else if k.n() <= EIGEN_LIMIT {
            TraceMethod::Eigen
        } else {
            TraceMethod::Cholesky
        }
    }
}

impl std::str::FromStr for TraceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "eigen" => Ok(TraceMethod::Eigen),
            "cholesky" => Ok(TraceMethod::Cholesky),
            "hutchinson" => Ok(TraceMethod::Hutchinson { n_vectors: DEFAULT_HUTCHINSON_VECTORS, seed: 0 }),
            _ => {
                if let Some(rest) = s.strip_prefix("hutchinson:") {
                    let n = rest
                        .parse::<usize>()
                        .map_err(|_| Error::Input(format!("bad probe count in '{s}'")))?;
                    return Ok(TraceMethod::Hutchinson { n_vectors: n, seed: 0 });
                }
                input(format!("unknown trace method '{s}' (eigen, cholesky, hutchinson[:k])"))
            }
        }
    }
}

/// Source of `trace(K_η⁻¹)` and `trace(K_η⁻²)`.
///
/// `factor` is the already prepared `K_η` when the caller has one; exact
/// providers reuse it instead of factoring again.
pub trait TraceProvider: Send + Sync {
    fn trace_inverse(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64>;

    /// `trace(K_η⁻²)`, never interpolated.
    fn trace_inverse_sq(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64>;

    fn describe(&self) -> String;
}

/// Exact traces from the full spectrum of `K`.
#[derive(Debug, Clone)]
pub struct EigenTraces {
    eigenvalues: Vec<f64>,
}

impl EigenTraces {
    /// Eigenvalues of dense `K`, floored at `n·ε·λₙ` so rounding cannot
    /// produce non-positive values.
    pub fn new(k: &CorrelationMatrix) -> Result<Self> {
        let dense = k.to_dense();
        let mut eigenvalues = symmetric_eigenvalues(&dense);
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("eigen-decomposition of K produced non-finite values".into()));
        }
        let max = eigenvalues.last().copied().unwrap_or(1.0).max(0.0);
        let floor = k.n() as f64 * f64::EPSILON * max;
        eigenvalues.iter_mut().for_each(|v| *v = v.max(floor));
        Ok(EigenTraces { eigenvalues })
    }

    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Self {
        EigenTraces { eigenvalues }
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn sum_powers(&self, shift: f64, power: i32) -> f64 {
        let mut acc = Compensated::default();
        for &l in &self.eigenvalues {
            acc.add((l + shift).powi(-power));
        }
        acc.value()
    }
}

fn effective_shift(eta: f64, factor: Option<&KEtaFactor<'_>>) -> f64 {
    factor.map(|f| f.shift()).unwrap_or(eta)
}

impl TraceProvider for EigenTraces {
    fn trace_inverse(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        Ok(self.sum_powers(effective_shift(eta, factor), 1))
    }

    fn trace_inverse_sq(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        Ok(self.sum_powers(effective_shift(eta, factor), 2))
    }

    fn describe(&self) -> String {
        "eigen".into()
    }
}

/// Exact traces from the Cholesky factor: `‖L⁻¹‖²_F`.
pub struct CholeskyTraces<'a> {
    k: &'a CorrelationMatrix,
    solver: Solver,
}

impl<'a> CholeskyTraces<'a> {
    pub fn new(k: &'a CorrelationMatrix, par: Parallelism) -> Self {
        CholeskyTraces { k, solver: Solver::new(SolverMethod::DenseCholesky, par) }
    }

    fn with_factor<T>(&self, eta: f64, factor: Option<&KEtaFactor<'_>>, f: impl Fn(&KEtaFactor<'_>) -> T) -> Result<T> {
        match factor {
            Some(fac) if fac.cholesky().is_some() => Ok(f(fac)),
            _ => {
                let own = self.solver.factor(self.k, eta)?;
                Ok(f(&own))
            }
        }
    }
}

impl TraceProvider for CholeskyTraces<'_> {
    fn trace_inverse(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        self.with_factor(eta, factor, |fac| {
            let chol = fac.cholesky().expect("dense factor");
            chol.trace_inverse(fac.parallelism())
        })
    }

    fn trace_inverse_sq(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        self.with_factor(eta, factor, |fac| {
            let chol = fac.cholesky().expect("dense factor");
            frobenius_sq(&chol.inverse(fac.parallelism()))
        })
    }

    fn describe(&self) -> String {
        "cholesky".into()
    }
}

/// Hutchinson estimates with Rademacher probes.
pub struct HutchinsonTraces<'a> {
    k: &'a CorrelationMatrix,
    solver: &'a Solver,
    n_vectors: usize,
    seed: u64,
}

impl<'a> HutchinsonTraces<'a> {
    pub fn new(k: &'a CorrelationMatrix, solver: &'a Solver, n_vectors: usize, seed: u64) -> Result<Self> {
        if n_vectors < 2 {
            return input("Hutchinson estimation needs at least two probe vectors");
        }
        Ok(HutchinsonTraces { k, solver, n_vectors, seed })
    }

    fn samples(&self, eta: f64, factor: Option<&KEtaFactor<'_>>, squared: bool) -> Result<Vec<f64>> {
        let probes = rademacher_probes(self.k.n(), self.n_vectors, self.seed);
        let solved = match factor {
            Some(f) => f.solve(&probes)?,
            None => self.solver.factor(self.k, eta)?.solve(&probes)?,
        };
        Ok((0..self.n_vectors)
            .map(|j| {
                let s = solved.column(j);
                if squared {
                    dot(s.as_slice(), s.as_slice())
                } else {
                    dot(probes.column(j).as_slice(), s.as_slice())
                }
            })
            .collect())
    }
}

impl TraceProvider for HutchinsonTraces<'_> {
    fn trace_inverse(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        Ok(mean_and_stderr(&self.samples(eta, factor, false)?).0)
    }

    fn trace_inverse_sq(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        Ok(mean_and_stderr(&self.samples(eta, factor, true)?).0)
    }

    fn describe(&self) -> String {
        format!("hutchinson({} vectors, seed {})", self.n_vectors, self.seed)
    }
}

/// `n × k` matrix of ±1 entries. Column `j` is drawn from its own ChaCha20
/// stream so the probes do not depend on evaluation order.
pub fn rademacher_probes(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, k);
    for j in 0..k {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        for i in 0..n {
            out[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    out
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// `Σᵢ 1/(λᵢ + η)` over the eigenvalues of dense `K`.
pub fn trace_inv_eigen(k: &CorrelationMatrix, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    EigenTraces::new(k)?.trace_inverse(eta, None)
}

/// `‖L_η⁻¹‖²_F` from the Cholesky factor of `K_η`.
pub fn trace_inv_cholesky(k: &CorrelationMatrix, eta: f64, par: Parallelism) -> Result<f64> {
    check_eta(eta)?;
    CholeskyTraces::new(k, par).trace_inverse(eta, None)
}

/// Hutchinson estimate of `trace(K_η⁻¹)` and its standard error.
pub fn trace_inv_hutchinson(
    k: &CorrelationMatrix,
    eta: f64,
    solver: &Solver,
    n_vectors: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_eta(eta)?;
    let h = HutchinsonTraces::new(k, solver, n_vectors, seed)?;
    Ok(mean_and_stderr(&h.samples(eta, None, false)?))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return input(format!("eta must be finite and non-negative, got {eta}"));
    }
    Ok(())
}

/// Fitted interpolant of the normalized trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInterpolant {
    pub n: usize,
    pub nodes: Vec<f64>,
    /// `τ(0) = trace(K⁻¹)/n`.
    pub tau0: f64,
    pub tau_values: Vec<f64>,
    /// `w₀ = 1` followed by the fitted `w₁..w_p`.
    pub weights: Vec<f64>,
    pub method: TraceMethod,
    /// 2-norm condition number of the weight system (1 when there is none).
    pub condition: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl TraceInterpolant {
    /// Fits from exact or estimated normalized traces at `η = 0` and at the nodes.
    pub fn from_values(n: usize, tau0: f64, nodes: &[f64], tau_values: &[f64], method: TraceMethod) -> Result<Self> {
        validate_nodes(nodes)?;
        if nodes.len() != tau_values.len() {
            return input("one trace value per node is required");
        }
        if !(tau0 > 0.0) || tau_values.iter().any(|t| !(*t > 0.0)) {
            return input("normalized traces must be positive");
        }
        let p = nodes.len();
        let mut weights = vec![1.0];
        let mut condition = 1.0;
        if p > 0 {
            let a = DMatrix::from_fn(p, p, |i, j| nodes[i].powf(1.0 / (j as f64 + 2.0)));
            let rhs = DVector::from_fn(p, |i, _| 1.0 / tau_values[i] - 1.0 / tau0 - nodes[i]);
            let sv = a.clone().svd(false, false).singular_values;
            let smax = sv.max();
            let smin = sv.min();
            condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            let sol = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numeric("trace interpolation system is singular".into()))?;
            weights.extend(sol.iter());
        }
        let warning = (condition > CONDITION_WARNING)
            .then(|| format!("interpolation system is ill conditioned (condition number {condition:.2e})"));
        Ok(TraceInterpolant {
            n,
            nodes: nodes.to_vec(),
            tau0,
            tau_values: tau_values.to_vec(),
            weights,
            method,
            condition,
            warning,
        })
    }

    /// Number of interpolation nodes `p`.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `τ(η)`.
    pub fn eval_tau(&self, eta: f64) -> f64 {
        if eta == 0.0 {
            return self.tau0;
        }
        let mut inv = 1.0 / self.tau0;
        for (i, w) in self.weights.iter().enumerate() {
            inv += w * eta.powf(1.0 / (i as f64 + 1.0));
        }
        1.0 / inv
    }

    /// `trace(K_η⁻¹) ≈ n·τ(η)`.
    pub fn trace(&self, eta: f64) -> f64 {
        self.n as f64 * self.eval_tau(eta)
    }
}

fn validate_nodes(nodes: &[f64]) -> Result<()> {
    if nodes.len() > MAX_NODES {
        return input(format!("at most {MAX_NODES} interpolation nodes are supported, got {}", nodes.len()));
    }
    if nodes.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return input("interpolation nodes must be positive and finite");
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return input("interpolation nodes must be distinct and ascending");
    }
    Ok(())
}

/// Fits the interpolant of `τ(η)` for `K` with traces from `method`.
pub fn fit_tau_interpolant(
    k: &CorrelationMatrix,
    nodes: &[f64],
    method: TraceMethod,
    par: Parallelism,
) -> Result<TraceInterpolant> {
    validate_nodes(nodes)?;
    let n = k.n();
    let etas: Vec<f64> = std::iter::once(0.0).chain(nodes.iter().copied()).collect();
    let traces: Vec<f64> = match method {
        TraceMethod::Eigen => {
            let e = EigenTraces::new(k)?;
            etas.iter().map(|&eta| e.trace_inverse(eta, None)).collect::<Result<_>>()?
        }
        TraceMethod::Cholesky => {
            let c = CholeskyTraces::new(k, par);
            etas.iter().map(|&eta| c.trace_inverse(eta, None)).collect::<Result<_>>()?
        }
        TraceMethod::Hutchinson { n_vectors, seed } => {
            let solver = if k.is_sparse() {
                Solver::new(SolverMethod::auto(k), par)
            } else {
                Solver::new(SolverMethod::DenseCholesky, par)
            };
            let h = HutchinsonTraces::new(k, &solver, n_vectors, seed)?;
            etas.iter().map(|&eta| h.trace_inverse(eta, None)).collect::<Result<_>>()?
        }
    };
    let taus: Vec<f64> = traces.iter().map(|t| t / n as f64).collect();
    TraceInterpolant::from_values(n, taus[0], nodes, &taus[1..], method)
}

/// Traces from a fitted interpolant; the squared trace is computed exactly
/// from the factor (dense inverse, or Hutchinson for sparse `K`).
pub struct InterpolatedTraces<'a> {
    interp: TraceInterpolant,
    k: &'a CorrelationMatrix,
    solver: &'a Solver,
    seed: u64,
}

impl<'a> InterpolatedTraces<'a> {
    pub fn new(interp: TraceInterpolant, k: &'a CorrelationMatrix, solver: &'a Solver, seed: u64) -> Self {
        InterpolatedTraces { interp, k, solver, seed }
    }

    pub fn interpolant(&self) -> &TraceInterpolant {
        &self.interp
    }
}

impl TraceProvider for InterpolatedTraces<'_> {
    fn trace_inverse(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        Ok(self.interp.trace(effective_shift(eta, factor)))
    }

    fn trace_inverse_sq(&self, eta: f64, factor: Option<&KEtaFactor<'_>>) -> Result<f64> {
        match factor {
            Some(f) if f.cholesky().is_some() => {
                let chol = f.cholesky().expect("dense factor");
                Ok(frobenius_sq(&chol.inverse(f.parallelism())))
            }
            _ => HutchinsonTraces::new(self.k, self.solver, DEFAULT_HUTCHINSON_VECTORS, self.seed)?
                .trace_inverse_sq(eta, factor),
        }
    }

    fn describe(&self) -> String {
        format!("interpolated(p = {}, {:?})", self.interp.order(), self.interp.method)
    }
}
