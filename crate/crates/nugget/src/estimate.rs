//! End-to-end estimation: the profiled root search in `η`, the direct
//! Nelder–Mead baselines, and the kernel-hyperparameter optimizer.

use std::cell::{Cell, RefCell};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::algebra::{Solver, SolverMethod};
use crate::analysis::{
    asymptote_coefficients, asymptote_roots, derivative_bounds, large_n_default, search_interval, spectrum_bounds,
    AsymptoteCoefficients, SpectrumSummary,
};
use crate::error::{input, Error, Result};
use crate::kernels::CorrelationKernel;
use crate::likelihood::{
    ell_noise_only, error_only_variance, log_likelihood_variances, noise_only_variance, EtaObjective,
    LikelihoodEval, ProfileLikelihood,
};
use crate::model::{GpModel, HyperParams, Provenance};
use crate::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::par::Parallelism;
use crate::rootfind::chandrupatla_with_values;
use crate::trace::{
    fit_tau_interpolant, CholeskyTraces, EigenTraces, HutchinsonTraces, InterpolatedTraces, TraceInterpolant,
    TraceMethod, TraceProvider, DEFAULT_NODES,
};

/// Bounds `c ≪ 1 ≪ C` separating interior estimates from the two limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { lower: 1e-4, upper: 1e4 }
    }
}

/// Where `trace(K_η⁻¹)` comes from during the root search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TraceStrategy {
    /// Exact eigenvalue traces for small dense `K`, otherwise an interpolant
    /// fitted at the default nodes.
    Auto,
    Exact { method: TraceMethod },
    Interpolated { method: TraceMethod, nodes: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub thresholds: Thresholds,
    /// Root tolerance in `log₁₀ η`.
    pub x_tol: f64,
    /// `f_tol = f_tol_scale · (n − m)`.
    pub f_tol_scale: f64,
    pub max_root_iter: usize,
    pub scan_probes: usize,
    pub trace: TraceStrategy,
    /// `None` picks the large-`n` asymptote approximation when `n > 50m`.
    pub large_n_approx: Option<bool>,
    /// `None` picks the solver from the storage of `K`.
    pub solver: Option<SolverMethod>,
    pub parallelism: Parallelism,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            thresholds: Thresholds::default(),
            x_tol: 1e-6,
            f_tol_scale: 1e-8,
            max_root_iter: 100,
            scan_probes: 16,
            trace: TraceStrategy::Auto,
            large_n_approx: None,
            solver: None,
            parallelism: Parallelism::default(),
            seed: 0,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.thresholds;
        if !(t.lower > 0.0 && t.lower < 1.0 && t.upper > 1.0 && t.upper.is_finite()) {
            return input(format!("thresholds must satisfy 0 < c < 1 < C, got ({}, {})", t.lower, t.upper));
        }
        if !(self.x_tol > 0.0) || !(self.f_tol_scale >= 0.0) {
            return input("tolerances must be positive");
        }
        if self.scan_probes < 2 {
            return input("the scan needs at least two probes");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProfiledEta,
    DirectNelderMead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Interior,
    NoiseDominated,
    ErrorDominated,
    Degenerate,
}

/// `dℓ/dη` at one scan probe together with its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub eta: f64,
    pub ell: f64,
    pub d_ell: f64,
    pub bound: Option<f64>,
}

/// A root of `dℓ/dη` found inside a bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootRecord {
    pub bracket: (f64, f64),
    pub eta: f64,
    pub ell: f64,
    pub d_ell: f64,
    pub d2_ell: Option<f64>,
    pub iterations: usize,
    /// `d²ℓ/dη² < 0` held at the root.
    pub is_maximum: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub precompute_s: f64,
    pub root_find_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub spectrum: Option<SpectrumSummary>,
    pub asymptote: Option<AsymptoteCoefficients>,
    pub asymptote_roots_order1: Vec<f64>,
    pub asymptote_roots_order2: Vec<f64>,
    pub search_interval: Option<(f64, f64)>,
    pub probes: Vec<Probe>,
    pub roots: Vec<RootRecord>,
    #[serde(with = "crate::serde_ext::extended_f64_opt", default)]
    pub ell_at_zero: Option<f64>,
    #[serde(with = "crate::serde_ext::extended_f64_opt", default)]
    pub ell_at_infinity: Option<f64>,
    pub trace_source: String,
    pub interpolant: Option<TraceInterpolant>,
    pub jitter: f64,
    /// Inner estimations that failed during kernel optimization.
    pub failed_evaluations: usize,
    /// Profile-likelihood evaluations summed over all inner estimations.
    pub inner_ell_evals: usize,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub hyperparams: HyperParams,
    pub alpha_hat: Option<f64>,
    pub nu_hat: Option<f64>,
    /// Maximized `ℓ`, or the log posterior when priors are in use.
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub ell_max: f64,
    pub n_ell_evals: usize,
    pub n_root_iters: usize,
    pub method: Method,
    pub outcome: Outcome,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl EstimationReport {
    pub fn sigma(&self) -> f64 {
        self.hyperparams.sigma()
    }

    pub fn sigma0(&self) -> f64 {
        self.hyperparams.sigma0()
    }

    pub fn log10_eta(&self) -> f64 {
        self.hyperparams.eta.log10()
    }
}

/// Evaluation cache keyed by the exact `η`, counting real evaluations.
struct Memo<'o> {
    objective: &'o dyn EtaObjective,
    cache: RefCell<Vec<LikelihoodEval>>,
    count: Cell<usize>,
}

impl<'o> Memo<'o> {
    fn new(objective: &'o dyn EtaObjective) -> Self {
        Memo { objective, cache: RefCell::new(Vec::new()), count: Cell::new(0) }
    }

    fn get(&self, eta: f64, second_order: bool) -> Result<LikelihoodEval> {
        if let Some(e) = self
            .cache
            .borrow()
            .iter()
            .find(|e| e.eta.to_bits() == eta.to_bits() && (!second_order || e.d2_ell.is_some()))
        {
            return Ok(*e);
        }
        self.count.set(self.count.get() + 1);
        let e = self.objective.evaluate(eta, second_order)?;
        self.cache.borrow_mut().push(e);
        Ok(e)
    }
}

/// The profiled estimator with the default evaluator.
pub fn estimate_variances(model: &GpModel, config: &EstimationConfig) -> Result<EstimationReport> {
    config.validate()?;
    let start = Instant::now();
    if model.is_degenerate() {
        return Ok(degenerate_report(Method::ProfiledEta));
    }
    let par = config.parallelism;
    let solver = Solver::new(config.solver.unwrap_or_else(|| SolverMethod::auto(model.k())), par);
    let mut diag = Diagnostics::default();

    let mut eigen: Option<EigenTraces> = None;
    let traces: Box<dyn TraceProvider + '_> = match &config.trace {
        TraceStrategy::Auto => match TraceMethod::auto(model.k(), config.seed) {
            TraceMethod::Eigen => {
                let e = EigenTraces::new(model.k())?;
                eigen = Some(e.clone());
                Box::new(e)
            }
            method => {
                let interp = fit_tau_interpolant(model.k(), &DEFAULT_NODES, method, par)?;
                diag.interpolant = Some(interp.clone());
                Box::new(InterpolatedTraces::new(interp, model.k(), &solver, config.seed))
            }
        },
        TraceStrategy::Exact { method } => match *method {
            TraceMethod::Eigen => {
                let e = EigenTraces::new(model.k())?;
                eigen = Some(e.clone());
                Box::new(e)
            }
            TraceMethod::Cholesky => Box::new(CholeskyTraces::new(model.k(), par)),
            TraceMethod::Hutchinson { n_vectors, seed } => {
                Box::new(HutchinsonTraces::new(model.k(), &solver, n_vectors, seed)?)
            }
        },
        TraceStrategy::Interpolated { method, nodes } => {
            let interp = fit_tau_interpolant(model.k(), nodes, *method, par)?;
            diag.interpolant = Some(interp.clone());
            Box::new(InterpolatedTraces::new(interp, model.k(), &solver, config.seed))
        }
    };
    if let Some(w) = diag.interpolant.as_ref().and_then(|i| i.warning.clone()) {
        diag.warnings.push(w);
    }
    diag.trace_source = traces.describe();
    let spectrum = match &eigen {
        Some(e) => SpectrumSummary::from_eigenvalues(e.eigenvalues())?,
        None => spectrum_bounds(model.k(), par)?,
    };
    let objective = ProfileLikelihood::new(model, &solver, traces.as_ref())?;
    let mut report = estimate_with_objective(model, &objective, Some(spectrum), config, diag, start)?;
    report.diagnostics.jitter = solver.jitter();
    Ok(report)
}

fn degenerate_report(method: Method) -> EstimationReport {
    EstimationReport {
        hyperparams: HyperParams { sigma2: 0.0, sigma02: 0.0, eta: 0.0, provenance: Provenance::Estimated },
        alpha_hat: None,
        nu_hat: None,
        ell_max: f64::INFINITY,
        n_ell_evals: 0,
        n_root_iters: 0,
        method,
        outcome: Outcome::Degenerate,
        converged: true,
        diagnostics: Diagnostics {
            warnings: vec!["observations lie in the range of the design matrix; both variances are zero".into()],
            ..Default::default()
        },
    }
}

/// The root search and candidate selection for any evaluator of the profile
/// likelihood. `n_ell_evals` counts the calls made to `objective`.
pub fn estimate_with_objective(
    model: &GpModel,
    objective: &dyn EtaObjective,
    spectrum: Option<SpectrumSummary>,
    config: &EstimationConfig,
    mut diag: Diagnostics,
    start: Instant,
) -> Result<EstimationReport> {
    config.validate()?;
    if model.is_degenerate() {
        return Ok(degenerate_report(Method::ProfiledEta));
    }
    let par = config.parallelism;
    let (n, m, dof) = (model.n(), model.m(), model.dof());
    let spectrum = match spectrum {
        Some(s) => s,
        None => spectrum_bounds(model.k(), par)?,
    };
    diag.spectrum = Some(spectrum);

    let large_n = config.large_n_approx.unwrap_or_else(|| large_n_default(n, m));
    match asymptote_coefficients(model, large_n, par) {
        Ok(c) => {
            diag.asymptote_roots_order1 = asymptote_roots(&c, 1);
            diag.asymptote_roots_order2 = asymptote_roots(&c, 2);
            diag.asymptote = Some(c);
        }
        Err(e) => diag.warnings.push(format!("asymptote unavailable: {e}")),
    }
    let all_roots: Vec<f64> =
        diag.asymptote_roots_order1.iter().chain(&diag.asymptote_roots_order2).copied().collect();
    let (lo, hi) = search_interval(&spectrum, &all_roots);
    diag.search_interval = Some((lo, hi));
    let t_pre = start.elapsed().as_secs_f64();

    let memo = Memo::new(objective);
    let (xlo, xhi) = (lo.log10(), hi.log10());
    let k = config.scan_probes;
    let xs: Vec<f64> = (0..k).map(|i| xlo + (xhi - xlo) * i as f64 / (k - 1) as f64).collect();
    for &x in &xs {
        let eta = 10f64.powf(x);
        let e = memo.get(eta, false)?;
        diag.probes.push(Probe { eta, ell: e.ell, d_ell: e.d_ell, bound: Some(derivative_bounds(&spectrum, n, m, eta).0) });
    }

    let f_tol = config.f_tol_scale * dof;
    let mut n_root_iters = 0;
    for i in 0..k - 1 {
        let (fa, fb) = (diag.probes[i].d_ell, diag.probes[i + 1].d_ell);
        // Only + → − crossings are maxima of ℓ.
        if !(fa > 0.0 && fb <= 0.0) {
            continue;
        }
        let root = chandrupatla_with_values(
            |x| Ok(memo.get(10f64.powf(x), false)?.d_ell),
            xs[i],
            fa,
            xs[i + 1],
            fb,
            config.x_tol,
            f_tol,
            config.max_root_iter,
        )?;
        n_root_iters += root.iterations;
        let eta = 10f64.powf(root.x);
        let e = memo.get(eta, true)?;
        let d2 = e.d2_ell;
        diag.roots.push(RootRecord {
            bracket: (diag.probes[i].eta, diag.probes[i + 1].eta),
            eta,
            ell: e.ell,
            d_ell: e.d_ell,
            d2_ell: d2,
            iterations: root.iterations,
            is_maximum: d2.is_some_and(|v| v < 0.0),
        });
    }

    match memo.get(0.0, false) {
        Ok(e) => diag.ell_at_zero = Some(e.ell),
        Err(err) => diag.warnings.push(format!("η = 0 boundary not evaluated: {err}")),
    }
    let ell_inf = ell_noise_only(model)?;
    diag.ell_at_infinity = Some(ell_inf);
    let t_root = start.elapsed().as_secs_f64() - t_pre;

    // Candidates: accepted interior maxima and the two limits.
    enum Pick {
        Root(usize),
        Zero,
        Infinity,
    }
    let mut best = (Pick::Infinity, ell_inf);
    if let Some(e0) = diag.ell_at_zero {
        if e0 > best.1 {
            best = (Pick::Zero, e0);
        }
    }
    for (i, r) in diag.roots.iter().enumerate() {
        if r.is_maximum && r.ell > best.1 {
            best = (Pick::Root(i), r.ell);
        }
    }
    if !diag.roots.iter().any(|r| r.is_maximum) {
        diag.warnings.push("no interior maximum found; the best boundary limit was returned".into());
    }

    let t = config.thresholds;
    let (hyperparams, outcome) = match best.0 {
        Pick::Root(i) => {
            let r = diag.roots[i];
            let e = memo.get(r.eta, true)?;
            if r.eta > t.upper {
                (HyperParams::noise_only(noise_only_variance(model), Provenance::Estimated), Outcome::NoiseDominated)
            } else if r.eta < t.lower {
                (error_only(model, &memo)?, Outcome::ErrorDominated)
            } else {
                (HyperParams::from_sigma2_eta(e.sigma2_hat, r.eta, Provenance::Estimated)?, Outcome::Interior)
            }
        }
        Pick::Zero => (error_only(model, &memo)?, Outcome::ErrorDominated),
        Pick::Infinity => {
            (HyperParams::noise_only(noise_only_variance(model), Provenance::Estimated), Outcome::NoiseDominated)
        }
    };
    diag.timings = Timings { precompute_s: t_pre, root_find_s: t_root, total_s: start.elapsed().as_secs_f64() };
    Ok(EstimationReport {
        hyperparams,
        alpha_hat: None,
        nu_hat: None,
        ell_max: best.1,
        n_ell_evals: memo.count.get(),
        n_root_iters,
        method: Method::ProfiledEta,
        outcome,
        converged: true,
        diagnostics: diag,
    })
}

fn error_only(model: &GpModel, memo: &Memo<'_>) -> Result<HyperParams> {
    let e = memo.get(0.0, false)?;
    let _ = model;
    HyperParams::from_sigma2_eta(e.sigma2_hat, 0.0, Provenance::Estimated)
}

/// Error-only variance without an evaluator, for callers that need the
/// `η = 0` limit directly.
pub fn error_dominated_variance(model: &GpModel, par: Parallelism) -> Result<f64> {
    error_only_variance(model, &Solver::auto(model, par))
}

/// Prior on one kernel hyperparameter (unnormalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Prior {
    /// Constant on `[lo, hi]`, zero outside.
    Uniform { lo: f64, hi: f64 },
    /// `H(x)/(1 + x/scale)²`.
    InverseSquare { scale: f64 },
}

impl Prior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::InverseSquare { scale } => {
                if x > 0.0 {
                    -2.0 * (1.0 + x / scale).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Priors on `α` and `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha: Prior,
    pub nu: Prior,
}

impl PriorSpec {
    /// `p(α) = H(α)`, `p(ν) = H(ν) − H(ν − 25)`.
    pub fn uniform() -> Self {
        PriorSpec {
            alpha: Prior::Uniform { lo: 0.0, hi: f64::INFINITY },
            nu: Prior::Uniform { lo: 0.0, hi: NU_MAX },
        }
    }

    /// `p(α) = H(α)/(1 + α)²`, `p(ν) = H(ν)/(1 + ν/25)²`.
    pub fn inverse_square() -> Self {
        PriorSpec { alpha: Prior::InverseSquare { scale: 1.0 }, nu: Prior::InverseSquare { scale: 25.0 } }
    }

    pub fn log_density(&self, alpha: f64, nu: f64) -> f64 {
        self.alpha.log_density(alpha) + self.nu.log_density(nu)
    }
}

impl std::str::FromStr for PriorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(PriorSpec::uniform()),
            "inverse-square" | "inverse_square" => Ok(PriorSpec::inverse_square()),
            other => input(format!("unknown prior '{other}' (uniform or inverse-square)")),
        }
    }
}

/// Box on the smoothness during kernel optimization.
pub const NU_MIN: f64 = 1e-2;
pub const NU_MAX: f64 = 25.0;

fn kernel_in_box(alpha: f64, nu: f64) -> bool {
    alpha > 0.0 && alpha.is_finite() && (NU_MIN..=NU_MAX).contains(&nu)
}

/// Options shared by the Nelder–Mead based optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { tol: 1e-4, max_evals: 2000 }
    }
}

/// Maximizes `ℓ(σ̂²(η̂), η̂; α, ν) + log p(α) + log p(ν)` over `(α, ν)` with
/// Nelder–Mead. Each objective evaluation runs [`estimate_variances`] on the
/// model built for that kernel; failures count as `−∞`.
pub fn profile_optimize(
    model_builder: &dyn Fn(f64, f64) -> Result<GpModel>,
    init: (f64, f64),
    priors: &PriorSpec,
    opts: &OptimizeOptions,
    config: &EstimationConfig,
) -> Result<EstimationReport> {
    let start = Instant::now();
    if !kernel_in_box(init.0, init.1) || !priors.log_density(init.0, init.1).is_finite() {
        return input(format!("initial kernel parameters {init:?} are outside the prior support"));
    }
    let failed = Cell::new(0usize);
    let inner = Cell::new(0usize);
    let objective = |x: &[f64]| -> f64 {
        let (alpha, nu) = (x[0], x[1]);
        let lp = priors.log_density(alpha, nu);
        if !kernel_in_box(alpha, nu) || !lp.is_finite() {
            return f64::INFINITY;
        }
        match model_builder(alpha, nu).and_then(|m| estimate_variances(&m, config)) {
            Ok(r) => {
                inner.set(inner.get() + r.n_ell_evals);
                -(r.ell_max + lp)
            }
            Err(_) => {
                failed.set(failed.get() + 1);
                f64::INFINITY
            }
        }
    };
    let nm = nelder_mead(objective, &[init.0, init.1], &NelderMeadOptions { x_tol: opts.tol, f_tol: opts.tol, max_evals: opts.max_evals })?;
    let (alpha, nu) = (nm.x[0], nm.x[1]);
    let model = model_builder(alpha, nu)?;
    let mut report = estimate_variances(&model, config)?;
    report.alpha_hat = Some(alpha);
    report.nu_hat = Some(nu);
    report.ell_max += priors.log_density(alpha, nu);
    report.n_ell_evals = nm.n_evals;
    report.converged = nm.converged;
    report.diagnostics.failed_evaluations = failed.get();
    report.diagnostics.inner_ell_evals = inner.get();
    report.diagnostics.timings.total_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Maximizes `ℓ(σ², σ₀²; α, ν) + log p(α) + log p(ν)` directly over
/// `(α, ν, σ, σ₀)`, the baseline for [`profile_optimize`].
pub fn direct_optimize(
    model_builder: &dyn Fn(f64, f64) -> Result<GpModel>,
    init: (f64, f64, f64, f64),
    priors: &PriorSpec,
    opts: &OptimizeOptions,
    par: Parallelism,
) -> Result<EstimationReport> {
    let start = Instant::now();
    let failed = Cell::new(0usize);
    let objective = |x: &[f64]| -> f64 {
        let (alpha, nu, s, s0) = (x[0], x[1], x[2], x[3]);
        let lp = priors.log_density(alpha, nu);
        if !kernel_in_box(alpha, nu) || !lp.is_finite() {
            return f64::INFINITY;
        }
        let value = model_builder(alpha, nu).and_then(|m| {
            let solver = Solver::auto(&m, par);
            log_likelihood_variances(&m, s * s, s0 * s0, &solver)
        });
        match value {
            Ok(v) if v.is_finite() => -(v + lp),
            _ => {
                failed.set(failed.get() + 1);
                f64::INFINITY
            }
        }
    };
    let x0 = [init.0, init.1, init.2, init.3];
    let nm = nelder_mead(objective, &x0, &NelderMeadOptions { x_tol: opts.tol, f_tol: opts.tol, max_evals: opts.max_evals })?;
    let hyperparams = HyperParams::from_variances(nm.x[2] * nm.x[2], nm.x[3] * nm.x[3], Provenance::Estimated)?;
    let diagnostics = Diagnostics {
        failed_evaluations: failed.get(),
        timings: Timings { total_s: start.elapsed().as_secs_f64(), ..Default::default() },
        ..Default::default()
    };
    Ok(EstimationReport {
        outcome: classify(&hyperparams, &Thresholds::default()),
        hyperparams,
        alpha_hat: Some(nm.x[0]),
        nu_hat: Some(nm.x[1]),
        ell_max: -nm.f,
        n_ell_evals: nm.n_evals,
        n_root_iters: 0,
        method: Method::DirectNelderMead,
        converged: nm.converged,
        diagnostics,
    })
}

/// Direct two-dimensional maximization of `ℓ(σ², σ₀²)` for a fixed kernel.
pub fn direct_variances(
    model: &GpModel,
    init: (f64, f64),
    opts: &OptimizeOptions,
    par: Parallelism,
) -> Result<EstimationReport> {
    let start = Instant::now();
    if model.is_degenerate() {
        return Ok(degenerate_report(Method::DirectNelderMead));
    }
    let solver = Solver::auto(model, par);
    let objective = |x: &[f64]| -> f64 {
        if x[0] < 0.0 || x[1] < 0.0 {
            return f64::INFINITY;
        }
        match log_likelihood_variances(model, x[0], x[1], &solver) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let nm = nelder_mead(objective, &[init.0, init.1], &NelderMeadOptions { x_tol: opts.tol, f_tol: opts.tol, max_evals: opts.max_evals })?;
    let hyperparams = HyperParams::from_variances(nm.x[0], nm.x[1], Provenance::Estimated)?;
    Ok(EstimationReport {
        outcome: classify(&hyperparams, &Thresholds::default()),
        hyperparams,
        alpha_hat: None,
        nu_hat: None,
        ell_max: -nm.f,
        n_ell_evals: nm.n_evals,
        n_root_iters: 0,
        method: Method::DirectNelderMead,
        converged: nm.converged,
        diagnostics: Diagnostics {
            timings: Timings { total_s: start.elapsed().as_secs_f64(), ..Default::default() },
            jitter: solver.jitter(),
            ..Default::default()
        },
    })
}

fn classify(h: &HyperParams, t: &Thresholds) -> Outcome {
    if h.eta > t.upper {
        Outcome::NoiseDominated
    } else if h.eta < t.lower {
        Outcome::ErrorDominated
    } else {
        Outcome::Interior
    }
}

/// Builder of Matérn models on the points, data and design of `base`.
pub fn matern_builder(base: &GpModel, par: Parallelism) -> impl Fn(f64, f64) -> Result<GpModel> + '_ {
    move |alpha, nu| {
        let taper = base.kernel().taper_threshold;
        let kernel = CorrelationKernel::matern(alpha, nu).with_taper(taper);
        base.with_kernel(kernel, par)
    }
}
