//! Log marginal likelihood, the profiled variance `σ̂²(η)` and the analytic
//! derivatives of the profile likelihood in `η`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{dense_m1, EtaSystem, Solver};
use crate::error::{input, Error, Result};
use crate::linalg::sum::dot;
use crate::model::GpModel;
use crate::trace::TraceProvider;

/// One evaluation of the profile likelihood at `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEval {
    pub eta: f64,
    pub sigma2_hat: f64,
    pub ell: f64,
    pub d_ell: f64,
    pub d2_ell: Option<f64>,
    /// `zᵀM₁z`.
    pub zm1z: f64,
    /// `zᵀM₁²z`.
    pub zm2z: f64,
    /// `zᵀM₁³z`, present with the second derivative.
    pub zm3z: Option<f64>,
    pub trace_m1: f64,
    pub trace_m1_sq: Option<f64>,
    pub log_det_k: f64,
    pub log_det_b: f64,
}

/// `dℓ/dη = −(n−m)/2 · (trace(M₁)/(n−m) − zᵀM₁²z/zᵀM₁z)`.
pub fn d_ell_from_parts(dof: f64, trace_m1: f64, zm1z: f64, zm2z: f64) -> f64 {
    -0.5 * dof * (trace_m1 / dof - zm2z / zm1z)
}

/// `d²ℓ/dη² = ½(trace(M₁²) − 2zᵀM₁³z/σ̂² + (zᵀM₁²z)²/((n−m)σ̂⁴))`.
pub fn d2_ell_from_parts(dof: f64, trace_m1_sq: f64, sigma2: f64, zm2z: f64, zm3z: f64) -> f64 {
    0.5 * (trace_m1_sq - 2.0 * zm3z / sigma2 + zm2z * zm2z / (dof * sigma2 * sigma2))
}

/// Profile `ℓ` at `σ² = σ̂²(η)`.
pub fn profile_ell_from_parts(dof: f64, sigma2_hat: f64, log_det_k: f64, log_det_b: f64) -> f64 {
    -0.5 * dof * ((2.0 * PI).ln() + 1.0) - 0.5 * dof * sigma2_hat.ln() - 0.5 * log_det_k - 0.5 * log_det_b
}

fn require_non_degenerate(model: &GpModel) -> Result<()> {
    if model.is_degenerate() {
        Err(Error::Degenerate)
    } else {
        Ok(())
    }
}

/// Full evaluation at one `η` from a prepared system.
pub fn evaluate_system(
    model: &GpModel,
    sys: &EtaSystem<'_>,
    traces: &dyn TraceProvider,
    second_order: bool,
) -> Result<LikelihoodEval> {
    let dof = model.dof();
    let w = sys.w();
    let zm1z = sys.z_m1_z();
    let zm2z = dot(w.as_slice(), w.as_slice());
    let sigma2_hat = zm1z / dof;
    if !(sigma2_hat > 0.0) {
        return Err(Error::Numeric(format!(
            "zᵀM₁z = {zm1z:.3e} is not positive at η = {}",
            sys.eta()
        )));
    }
    let log_det_k = sys.log_det_k()?;
    let log_det_b = sys.log_det_b();
    let tr = traces.trace_inverse(sys.eta(), Some(sys.factor()))?;
    let trace_m1 = sys.trace_m1(tr);
    let d_ell = d_ell_from_parts(dof, trace_m1, zm1z, zm2z);
    let (d2_ell, zm3z, trace_m1_sq) = if second_order {
        let v = sys.apply_m1_vec(w)?;
        let zm3z = dot(w.as_slice(), v.as_slice());
        let tr2 = traces.trace_inverse_sq(sys.eta(), Some(sys.factor()))?;
        let tm2 = sys.trace_m1_sq(tr2)?;
        (Some(d2_ell_from_parts(dof, tm2, sigma2_hat, zm2z, zm3z)), Some(zm3z), Some(tm2))
    } else {
        (None, None, None)
    };
    Ok(LikelihoodEval {
        eta: sys.eta(),
        sigma2_hat,
        ell: profile_ell_from_parts(dof, sigma2_hat, log_det_k, log_det_b),
        d_ell,
        d2_ell,
        zm1z,
        zm2z,
        zm3z,
        trace_m1,
        trace_m1_sq,
        log_det_k,
        log_det_b,
    })
}

/// `σ̂²(η) = zᵀM₁,η z/(n−m)`.
pub fn sigma2_hat(model: &GpModel, eta: f64, solver: &Solver) -> Result<f64> {
    require_non_degenerate(model)?;
    let sys = EtaSystem::new(model, solver, eta)?;
    Ok(sys.z_m1_z() / model.dof())
}

/// `ℓ(σ², η)` with `Σ = σ²(K + ηI)`.
pub fn log_marginal_likelihood(model: &GpModel, sigma2: f64, eta: f64, solver: &Solver) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return input(format!("sigma2 must be positive and finite, got {sigma2}"));
    }
    require_non_degenerate(model)?;
    let sys = EtaSystem::new(model, solver, eta)?;
    ell_from_system(model, &sys, sigma2)
}

fn ell_from_system(model: &GpModel, sys: &EtaSystem<'_>, sigma2: f64) -> Result<f64> {
    let n = model.n() as f64;
    let m = model.m() as f64;
    let dof = model.dof();
    let ls = sigma2.ln();
    Ok(-0.5 * dof * (2.0 * PI).ln()
        - 0.5 * (n * ls + sys.log_det_k()?)
        - 0.5 * (sys.log_det_b() - m * ls)
        - 0.5 * sys.z_m1_z() / sigma2)
}

/// `ℓ` in terms of both variances; either may be zero but not both.
pub fn log_likelihood_variances(model: &GpModel, sigma2: f64, sigma02: f64, solver: &Solver) -> Result<f64> {
    if !(sigma2 >= 0.0) || !(sigma02 >= 0.0) || !sigma2.is_finite() || !sigma02.is_finite() {
        return input("variances must be finite and non-negative");
    }
    require_non_degenerate(model)?;
    if sigma2 == 0.0 {
        if sigma02 == 0.0 {
            return input("both variances are zero");
        }
        let n = model.n() as f64;
        let m = model.m() as f64;
        let ls = sigma02.ln();
        return Ok(-0.5 * model.dof() * (2.0 * PI).ln()
            - 0.5 * n * ls
            - 0.5 * (model.log_det_xtx()? - m * ls)
            - 0.5 * model.z_q_norm_sq() / sigma02);
    }
    log_marginal_likelihood(model, sigma2, sigma02 / sigma2, solver)
}

/// Profile `ℓ` and its first and second derivatives at `η`.
pub fn profile_ell(model: &GpModel, eta: f64, solver: &Solver, traces: &dyn TraceProvider) -> Result<LikelihoodEval> {
    require_non_degenerate(model)?;
    let sys = EtaSystem::new(model, solver, eta)?;
    evaluate_system(model, &sys, traces, true)
}

/// `dℓ/dη` of the profile likelihood.
pub fn d_ell_deta(model: &GpModel, eta: f64, solver: &Solver, traces: &dyn TraceProvider) -> Result<f64> {
    require_non_degenerate(model)?;
    let sys = EtaSystem::new(model, solver, eta)?;
    Ok(evaluate_system(model, &sys, traces, false)?.d_ell)
}

/// `d²ℓ/dη²` of the profile likelihood.
pub fn d2_ell_deta2(model: &GpModel, eta: f64, solver: &Solver, traces: &dyn TraceProvider) -> Result<f64> {
    Ok(profile_ell(model, eta, solver, traces)?.d2_ell.expect("second order requested"))
}

/// `ℓ` of the noise-only fit `σ² = 0`, `σ₀² = zᵀQz/(n−m)` (the `η → ∞` limit).
pub fn ell_noise_only(model: &GpModel) -> Result<f64> {
    require_non_degenerate(model)?;
    let dof = model.dof();
    let s0 = noise_only_variance(model);
    Ok(-0.5 * dof * ((2.0 * PI).ln() + 1.0) - 0.5 * dof * s0.ln() - 0.5 * model.log_det_xtx()?)
}

/// `zᵀQz/(n−m)`, the noise variance when `σ² = 0`.
pub fn noise_only_variance(model: &GpModel) -> f64 {
    model.z_q_norm_sq() / model.dof()
}

/// `σ̂²(0)`, the error variance when `σ₀² = 0`.
pub fn error_only_variance(model: &GpModel, solver: &Solver) -> Result<f64> {
    sigma2_hat(model, 0.0, solver)
}

/// `∂ᵏℓ/∂θᵏ` for `k ∈ {1, 2}` at `(σ², η)`, given the action of `Σ̇ = ∂Σ/∂θ`:
/// `k = 1`: `−½ tr(Σ̇M) + ½ zᵀMΣ̇Mz`;
/// `k = 2` (Σ linear in θ): `½ tr((Σ̇M)²) − zᵀM(Σ̇M)²z`.
/// `M = M₁,η/σ²` is built densely, so this is meant for small `n`.
pub fn ell_derivative_generic(
    model: &GpModel,
    sigma2: f64,
    eta: f64,
    sigma_dot: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    k: u32,
) -> Result<f64> {
    if !(1..=2).contains(&k) {
        return input(format!("derivative order {k} is not supported (1 or 2)"));
    }
    if !(sigma2 > 0.0) {
        return input("sigma2 must be positive");
    }
    let m = dense_m1(model, eta)? / sigma2;
    let n = model.n();
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = sigma_dot(&m.column(j).into_owned());
        if col.len() != n {
            return input("sigma_dot returned a vector of the wrong length");
        }
        s.set_column(j, &col);
    }
    let mz = &m * model.z();
    let dmz = sigma_dot(&mz);
    Ok(if k == 1 {
        -0.5 * s.trace() + 0.5 * dot(mz.as_slice(), dmz.as_slice())
    } else {
        let sdmz = &s * &dmz;
        0.5 * (&s * &s).trace() - dot(mz.as_slice(), sdmz.as_slice())
    })
}

/// Profile-likelihood evaluator used by the root finder and optimizers.
pub trait EtaObjective {
    fn evaluate(&self, eta: f64, second_order: bool) -> Result<LikelihoodEval>;

    /// Evaluations performed so far.
    fn evaluations(&self) -> usize;
}

/// The standard evaluator: one `K_η` factorization per call.
pub struct ProfileLikelihood<'a> {
    model: &'a GpModel,
    solver: &'a Solver,
    traces: &'a dyn TraceProvider,
    count: AtomicUsize,
}

impl<'a> ProfileLikelihood<'a> {
    pub fn new(model: &'a GpModel, solver: &'a Solver, traces: &'a dyn TraceProvider) -> Result<Self> {
        require_non_degenerate(model)?;
        Ok(ProfileLikelihood { model, solver, traces, count: AtomicUsize::new(0) })
    }

    pub fn model(&self) -> &GpModel {
        self.model
    }
}

impl EtaObjective for ProfileLikelihood<'_> {
    fn evaluate(&self, eta: f64, second_order: bool) -> Result<LikelihoodEval> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let sys = EtaSystem::new(self.model, self.solver, eta)?;
        evaluate_system(self.model, &sys, self.traces, second_order)
    }

    fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}
