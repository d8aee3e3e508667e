//! Spectrum-based bounds on the profile likelihood and its derivatives, and
//! the large-`η` asymptote of `dℓ/dη` used to narrow the root search.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CorrelationMatrix, CorrelationStorage};
use crate::linalg::dense::{symmetric_eigenvalues, Cholesky};
use crate::linalg::envelope::{rcm_ordering, EnvelopeCholesky};
use crate::linalg::lanczos::lanczos_extremes;
use crate::linalg::sum::dot;
use crate::model::GpModel;
use crate::par::Parallelism;

/// Dense eigensolve up to this size; Lanczos beyond.
pub const DENSE_SPECTRUM_LIMIT: usize = 1024;
pub const SEARCH_MIN: f64 = 1e-6;
pub const SEARCH_MAX: f64 = 1e8;

/// Extreme eigenvalues of `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl SpectrumSummary {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0) || !(lambda_max >= lambda_min) || !lambda_max.is_finite() {
            return Err(Error::Numeric(format!(
                "invalid spectrum [{lambda_min:e}, {lambda_max:e}]; K must be positive definite"
            )));
        }
        Ok(SpectrumSummary { lambda_min, lambda_max })
    }

    /// From ascending eigenvalues.
    pub fn from_eigenvalues(eigs: &[f64]) -> Result<Self> {
        match (eigs.first(), eigs.last()) {
            (Some(&lo), Some(&hi)) => SpectrumSummary::new(lo, hi),
            _ => Err(Error::Input("empty spectrum".into())),
        }
    }
}

/// `λ₁` and `λₙ` of `K`: full eigensolve for small dense matrices, otherwise
/// Lanczos on `K⁻¹` through one Cholesky factor (both ends of that spectrum
/// are well separated, unlike the bottom of the spectrum of `K`). Falls back
/// to Lanczos on `K` when `K` cannot be factored.
pub fn spectrum_bounds(k: &CorrelationMatrix, par: Parallelism) -> Result<SpectrumSummary> {
    if let Some(d) = k.dense().filter(|_| k.n() <= DENSE_SPECTRUM_LIMIT) {
        return SpectrumSummary::from_eigenvalues(&symmetric_eigenvalues(d));
    }
    let n = k.n();
    let max_iter = n.min(3000);
    let inverse = match &k.storage {
        CorrelationStorage::Dense(d) => Cholesky::factor(d.clone(), par).ok().map(|c| {
            lanczos_extremes(n, |x| Ok(c.solve_vec(&DVector::from_column_slice(x)).as_slice().to_vec()), 1e-6, max_iter)
        }),
        CorrelationStorage::Sparse(a) => EnvelopeCholesky::factor(a, 0.0, &rcm_ordering(a))
            .ok()
            .map(|c| lanczos_extremes(n, |x| Ok(c.solve(x)), 1e-6, max_iter)),
    };
    if let Some(Ok(r)) = inverse {
        if r.min > 0.0 {
            return SpectrumSummary::new(1.0 / r.max, 1.0 / r.min);
        }
    }
    let r = lanczos_extremes(n, |x| Ok(k.apply(x, par)), 1e-6, max_iter)?;
    SpectrumSummary::new(r.min, r.max)
}

/// Bounds `(b1, b2)` with `|dℓ/dη| ≤ b1` and `|d²ℓ/dη²| ≤ b2`.
pub fn derivative_bounds(spec: &SpectrumSummary, n: usize, m: usize, eta: f64) -> (f64, f64) {
    let dof = (n - m) as f64;
    let a = 1.0 / (spec.lambda_min + eta);
    let b = 1.0 / (spec.lambda_max + eta);
    (0.5 * dof * (a - b), dof * (a * a - b * b))
}

/// Bound on `|ℓ(η) − ℓ(η′)|`.
pub fn ell_gap_bound(spec: &SpectrumSummary, n: usize, m: usize, eta: f64, eta_prime: f64) -> f64 {
    let dof = (n - m) as f64;
    let (l1, ln) = (spec.lambda_min, spec.lambda_max);
    let r = ((l1 + eta) / (ln + eta)).ln() - ((l1 + eta_prime) / (ln + eta_prime)).ln();
    0.5 * dof * r.abs()
}

/// Coefficients of the large-`η` expansion
/// `dℓ/dη ≈ −(n−m)/2 · η⁻²(a₀ + a₁/η + a₂/η² + a₃/η³)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteCoefficients {
    pub a: [f64; 4],
    /// `trace(N)` with `N = KQ` (or `n` under the large-`n` approximation).
    pub trace_n: f64,
    /// `trace(N²)` (or `‖K‖²_F` under the large-`n` approximation).
    pub trace_n_sq: f64,
    pub large_n_approx: bool,
    pub n: usize,
    pub m: usize,
}

/// Whether the large-`n` trace approximation applies by default.
pub fn large_n_default(n: usize, m: usize) -> bool {
    n > 50 * m
}

/// Builds `a₀..a₃` from the moments `cₖ = žᵀQNᵏž` with `ž = z/‖z‖_Q`,
/// using only matrix-vector products with `K` and `Q`.
pub fn asymptote_coefficients(model: &GpModel, large_n_approx: bool, par: Parallelism) -> Result<AsymptoteCoefficients> {
    if model.is_degenerate() || model.z_q_norm_sq() == 0.0 {
        return Err(Error::Degenerate);
    }
    let n = model.n();
    let m = model.m();
    let dof = model.dof();
    let k = model.k();
    let zq = model.z_q_norm_sq().sqrt();
    let z_hat: DVector<f64> = model.z() / zq;
    let y = model.project(&z_hat)?;
    // v₀ = ž, vₖ₊₁ = K Q vₖ = N vₖ.
    let mut v = vec![z_hat];
    for _ in 0..4 {
        let qv = model.project(v.last().expect("non-empty"))?;
        v.push(DVector::from_vec(k.apply(qv.as_slice(), par)));
    }
    let c: Vec<f64> = v.iter().map(|vk| dot(y.as_slice(), vk.as_slice())).collect();

    let (trace_n, trace_n_sq) = if large_n_approx {
        (n as f64, k.frobenius_sq())
    } else {
        exact_n_traces(model, par)?
    };
    let t1 = trace_n / dof;
    let t2 = trace_n_sq / dof;
    let a = [
        -(t1 * c[0] - c[1]),
        t2 * c[0] + t1 * c[1] - 2.0 * c[2],
        -(t2 * c[1] + t1 * c[2] - 2.0 * c[3]),
        t2 * c[2] - c[4],
    ];
    Ok(AsymptoteCoefficients { a, trace_n, trace_n_sq, large_n_approx, n, m })
}

/// `trace(KQ)` and `trace((KQ)²)` exactly, through an orthonormal basis `U`
/// of `range(X)`: `tr(KQ) = tr(K) − tr(UᵀKU)` and
/// `tr(KQKQ) = ‖K‖²_F − 2‖KU‖²_F + ‖UᵀKU‖²_F`.
fn exact_n_traces(model: &GpModel, par: Parallelism) -> Result<(f64, f64)> {
    let k = model.k();
    let u = model.x().clone().qr().q();
    let mut ku = u.clone();
    for j in 0..u.ncols() {
        let col = k.apply(u.column(j).as_slice(), par);
        ku.column_mut(j).copy_from_slice(&col);
    }
    let utku = u.transpose() * &ku;
    // Unit diagonal.
    let trace_k = k.n() as f64;
    let tr_n = trace_k - utku.trace();
    let tr_n2 = k.frobenius_sq() - 2.0 * ku.norm_squared() + utku.norm_squared();
    Ok((tr_n, tr_n2))
}

impl AsymptoteCoefficients {
    /// Asymptotic `dℓ/dη` of order 1 (`a₀, a₁`) or 2 (all four terms).
    pub fn d_ell(&self, eta: f64, order: u8) -> f64 {
        let dof = (self.n - self.m) as f64;
        let a = &self.a;
        let inner = if order <= 1 {
            a[0] + a[1] / eta
        } else {
            a[0] + a[1] / eta + a[2] / (eta * eta) + a[3] / (eta * eta * eta)
        };
        -0.5 * dof * inner / (eta * eta)
    }
}

/// Positive real roots, ascending: `a₀η + a₁` for order 1 and
/// `a₀η³ + a₁η² + a₂η + a₃` for order 2.
pub fn asymptote_roots(coeffs: &AsymptoteCoefficients, order: u8) -> Vec<f64> {
    let a = coeffs.a;
    let mut roots = if order <= 1 {
        if a[0] == 0.0 {
            Vec::new()
        } else {
            vec![-a[1] / a[0]]
        }
    } else {
        cubic_real_roots(a[0], a[1], a[2], a[3])
    };
    roots.retain(|r| r.is_finite() && *r > 0.0);
    roots.sort_by(|x, y| x.partial_cmp(y).expect("finite roots"));
    roots
}

/// Real roots of `c₃x³ + c₂x² + c₁x + c₀` (degree drops when leading
/// coefficients vanish), refined by Newton steps.
pub fn cubic_real_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if c3.abs() <= 1e-14 * scale {
        return quadratic_real_roots(c2, c1, c0);
    }
    // Depressed cubic t³ + pt + q with x = t − b/3.
    let (b, c, d) = (c2 / c3, c1 / c3, c0 / c3);
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else if p == 0.0 {
        vec![shift]
    } else {
        let r = (-p / 3.0).sqrt();
        let phi = ((3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + shift)
            .collect()
    };
    for x in roots.iter_mut() {
        for _ in 0..4 {
            let f = ((c3 * *x + c2) * *x + c1) * *x + c0;
            let df = (3.0 * c3 * *x + 2.0 * c2) * *x + c1;
            if df == 0.0 {
                break;
            }
            let step = f / df;
            *x -= step;
            if step.abs() <= 1e-15 * x.abs() {
                break;
            }
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * x.abs().max(1.0));
    roots
}

fn quadratic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-14 * scale {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    r
}

/// `[λ₁/10, 10·max(λₙ, largest asymptote root, 1)]`, clamped to
/// `[1e-6, 1e8]`.
pub fn search_interval(spec: &SpectrumSummary, asym_roots: &[f64]) -> (f64, f64) {
    let top = asym_roots.iter().copied().fold(spec.lambda_max.max(1.0), f64::max);
    let lo = (spec.lambda_min / 10.0).clamp(SEARCH_MIN, SEARCH_MAX);
    let hi = (10.0 * top).clamp(SEARCH_MIN, SEARCH_MAX);
    (lo, hi.max(lo))
}
