//! Isotropic correlation kernels and assembly of the correlation matrix.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bessel::ln_bessel_k;
use crate::error::{input, Result};
use crate::linalg::Csr;
use crate::par::Parallelism;

/// Smoothness at and above which the Matérn kernel is replaced by its
/// Gaussian limit.
pub const GAUSSIAN_SMOOTHNESS: f64 = 25.0;

/// Point coordinates, row-major with a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return input("point dimension must be positive");
        }
        if !coords.len().is_multiple_of(dim) {
            return input(format!("{} coordinates do not split into {dim}-dimensional points", coords.len()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return input("point coordinates must be finite");
        }
        Ok(Points { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return input("points have inconsistent dimensions");
        }
        Points::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Exponential,
    Matern,
    Gaussian,
}

/// Kernel family with its scale `alpha`, Matérn smoothness `nu`, and taper
/// threshold (`0` disables tapering).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationKernel {
    pub family: KernelFamily,
    pub alpha: f64,
    pub nu: f64,
    pub taper_threshold: f64,
}

impl CorrelationKernel {
    pub fn exponential(alpha: f64) -> Self {
        CorrelationKernel { family: KernelFamily::Exponential, alpha, nu: 0.5, taper_threshold: 0.0 }
    }

    pub fn matern(alpha: f64, nu: f64) -> Self {
        CorrelationKernel { family: KernelFamily::Matern, alpha, nu, taper_threshold: 0.0 }
    }

    pub fn gaussian(alpha: f64) -> Self {
        CorrelationKernel { family: KernelFamily::Gaussian, alpha, nu: f64::INFINITY, taper_threshold: 0.0 }
    }

    pub fn with_taper(mut self, threshold: f64) -> Self {
        self.taper_threshold = threshold;
        self
    }

    pub fn is_tapered(&self) -> bool {
        self.taper_threshold > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return input(format!("kernel scale must be positive and finite, got {}", self.alpha));
        }
        if self.family == KernelFamily::Matern && !(self.nu > 0.0) {
            return input(format!("Matérn smoothness must be positive, got {}", self.nu));
        }
        if !(0.0..1.0).contains(&self.taper_threshold) {
            return input(format!("taper threshold must lie in [0, 1), got {}", self.taper_threshold));
        }
        Ok(())
    }

    /// Kernel value at a distance, with tapering applied last.
    pub fn value(&self, distance: f64) -> Result<f64> {
        if !distance.is_finite() || distance < 0.0 {
            return input(format!("distance must be finite and non-negative, got {distance}"));
        }
        self.validate()?;
        Ok(self.value_unchecked(distance))
    }

    pub(crate) fn value_unchecked(&self, distance: f64) -> f64 {
        let v = self.untapered(distance);
        if v <= self.taper_threshold {
            0.0
        } else {
            v
        }
    }

    fn untapered(&self, d: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        let r = d / self.alpha;
        match self.family {
            KernelFamily::Exponential => (-r).exp(),
            KernelFamily::Gaussian => (-0.5 * r * r).exp(),
            KernelFamily::Matern => matern(r, self.nu),
        }
    }

    /// Distance beyond which the tapered kernel vanishes, when tapering is on.
    pub fn support_radius(&self) -> Option<f64> {
        if !self.is_tapered() {
            return None;
        }
        let k = self.taper_threshold;
        match self.family {
            KernelFamily::Exponential => Some(-self.alpha * k.ln()),
            KernelFamily::Gaussian => Some(self.alpha * (-2.0 * k.ln()).sqrt()),
            KernelFamily::Matern => {
                // Monotone decreasing in distance: bracket then bisect.
                let mut hi = self.alpha;
                while self.untapered(hi) > k {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.untapered(mid) > k {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(hi)
            }
        }
    }

    fn benefits_from_cache(&self) -> bool {
        self.family == KernelFamily::Matern && half_integer_order(self.nu).is_none() && self.nu < GAUSSIAN_SMOOTHNESS
    }
}

/// Parses `exp:α`, `matern:α:ν` or `gauss:α`, optionally followed by
/// `:taper=κ`.
impl std::str::FromStr for CorrelationKernel {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts: Vec<&str> = s.trim().split(':').collect();
        let mut taper = 0.0;
        if let Some(t) = parts.last().and_then(|p| p.strip_prefix("taper=")) {
            taper = parse_number(t, s)?;
            parts.pop();
        }
        let kernel = match parts.as_slice() {
            [fam, a] if matches!(fam.to_ascii_lowercase().as_str(), "exp" | "exponential") => {
                CorrelationKernel::exponential(parse_number(a, s)?)
            }
            [fam, a] if matches!(fam.to_ascii_lowercase().as_str(), "gauss" | "gaussian") => {
                CorrelationKernel::gaussian(parse_number(a, s)?)
            }
            [fam, a, nu] if fam.eq_ignore_ascii_case("matern") => {
                CorrelationKernel::matern(parse_number(a, s)?, parse_number(nu, s)?)
            }
            _ => return input(format!("unknown kernel '{s}' (exp:α, matern:α:ν or gauss:α, optionally :taper=κ)")),
        }
        .with_taper(taper);
        kernel.validate()?;
        Ok(kernel)
    }
}

impl std::fmt::Display for CorrelationKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.family {
            KernelFamily::Exponential => write!(f, "exp:{}", self.alpha)?,
            KernelFamily::Gaussian => write!(f, "gauss:{}", self.alpha)?,
            KernelFamily::Matern => write!(f, "matern:{}:{}", self.alpha, self.nu)?,
        }
        if self.is_tapered() {
            write!(f, ":taper={}", self.taper_threshold)?;
        }
        Ok(())
    }
}

fn parse_number(field: &str, spec: &str) -> Result<f64> {
    field.trim().parse().or_else(|_| input(format!("'{field}' in kernel '{spec}' is not a number")))
}

/// Free-function form of [`CorrelationKernel::value`].
pub fn kernel_value(kernel: &CorrelationKernel, distance: f64) -> Result<f64> {
    kernel.value(distance)
}

fn half_integer_order(nu: f64) -> Option<u32> {
    let p = nu - 0.5;
    if p >= 0.0 && p.fract() == 0.0 && p < 64.0 {
        Some(p as u32)
    } else {
        None
    }
}

/// Matérn correlation at normalized distance `r = d/α`.
fn matern(r: f64, nu: f64) -> f64 {
    if nu >= GAUSSIAN_SMOOTHNESS {
        return (-0.5 * r * r).exp();
    }
    let x = (2.0 * nu).sqrt() * r;
    let v = match half_integer_order(nu) {
        Some(p) => matern_half_integer(x, p),
        None => {
            let ln = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() + ln_bessel_k(nu, x);
            ln.exp()
        }
    };
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Closed form for `ν = p + ½`: `e^{−x} p!/(2p)! Σᵢ (p+i)!/(i!(p−i)!) (2x)^{p−i}`.
fn matern_half_integer(x: f64, p: u32) -> f64 {
    let p = p as usize;
    // Coefficients built by ratios to avoid factorial overflow.
    let mut lead = 1.0; // p!/(2p)!
    for k in p + 1..=2 * p {
        lead /= k as f64;
    }
    let mut sum = 0.0;
    let mut coef = 1.0; // (p+i)!/(i!(p−i)!), starting at i = 0
    let two_x = 2.0 * x;
    for i in 0..=p {
        if i > 0 {
            coef *= (p + i) as f64 * (p - i + 1) as f64 / i as f64;
        }
        sum += coef * two_x.powi((p - i) as i32);
    }
    (-x).exp() * lead * sum
}

/// Storage of an assembled correlation matrix.
#[derive(Debug, Clone)]
pub enum CorrelationStorage {
    Dense(DMatrix<f64>),
    Sparse(Csr),
}

/// Assembly diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyDiagnostics {
    /// Pairs of distinct points at zero distance.
    pub duplicate_pairs: usize,
    /// Fraction of stored (non-zero) entries.
    pub density: f64,
}

#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub storage: CorrelationStorage,
    pub diagnostics: AssemblyDiagnostics,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        match &self.storage {
            CorrelationStorage::Dense(d) => d.nrows(),
            CorrelationStorage::Sparse(s) => s.n(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, CorrelationStorage::Sparse(_))
    }

    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        match &self.storage {
            CorrelationStorage::Dense(d) => Some(d),
            CorrelationStorage::Sparse(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            CorrelationStorage::Dense(d) => d.clone(),
            CorrelationStorage::Sparse(s) => s.to_dense(),
        }
    }

    /// `K x`.
    pub fn apply(&self, x: &[f64], par: Parallelism) -> Vec<f64> {
        match &self.storage {
            CorrelationStorage::Dense(d) => crate::linalg::dense::matvec(d, x, par),
            CorrelationStorage::Sparse(s) => s.shifted_matvec(x, 0.0, par),
        }
    }

    /// `‖K‖²_F`.
    pub fn frobenius_sq(&self) -> f64 {
        match &self.storage {
            CorrelationStorage::Dense(d) => crate::linalg::dense::frobenius_sq(d),
            CorrelationStorage::Sparse(s) => s.frobenius_sq(),
        }
    }
}

/// Builds `K_ij = k(‖xᵢ − xⱼ‖)`; sparse storage whenever tapering is on.
pub fn correlation_matrix(points: &Points, kernel: &CorrelationKernel, par: Parallelism) -> Result<CorrelationMatrix> {
    kernel.validate()?;
    let n = points.len();
    if n == 0 {
        return input("correlation matrix needs at least one point");
    }
    if kernel.is_tapered() {
        return sparse_matrix(points, kernel, par);
    }
    let cache = if kernel.benefits_from_cache() { Some(unique_distance_values(points, kernel, par)) } else { None };
    let rows: Vec<Vec<f64>> = par.map(n, |i| {
        (0..i)
            .map(|j| {
                let d = points.distance(i, j);
                match &cache {
                    Some(c) => c[&d.to_bits()],
                    None => kernel.value_unchecked(d),
                }
            })
            .collect()
    });
    let mut k = DMatrix::<f64>::identity(n, n);
    let mut duplicates = 0;
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    for i in 0..n {
        for j in 0..i {
            if points.distance(i, j) == 0.0 {
                duplicates += 1;
            }
        }
    }
    let nnz = k.iter().filter(|v| **v != 0.0).count();
    Ok(CorrelationMatrix {
        storage: CorrelationStorage::Dense(k),
        diagnostics: AssemblyDiagnostics { duplicate_pairs: duplicates, density: nnz as f64 / (n * n) as f64 },
    })
}

fn unique_distance_values(points: &Points, kernel: &CorrelationKernel, par: Parallelism) -> HashMap<u64, f64> {
    let n = points.len();
    let mut keys: Vec<u64> = Vec::new();
    {
        let mut seen = std::collections::HashSet::new();
        for i in 0..n {
            for j in 0..i {
                let b = points.distance(i, j).to_bits();
                if seen.insert(b) {
                    keys.push(b);
                }
            }
        }
    }
    let values = par.map(keys.len(), |t| kernel.value_unchecked(f64::from_bits(keys[t])));
    keys.into_iter().zip(values).collect()
}

fn sparse_matrix(points: &Points, kernel: &CorrelationKernel, par: Parallelism) -> Result<CorrelationMatrix> {
    let n = points.len();
    let radius = kernel.support_radius().expect("tapered kernel has a support radius");
    let dim = points.dim();
    let cell = if radius > 0.0 { radius } else { 1.0 };
    let key = |i: usize| -> Vec<i64> { points.point(i).iter().map(|c| (c / cell).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for i in 0..n {
        buckets.entry(key(i)).or_default().push(i);
    }
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
        .map(|mut c| {
            (0..dim)
                .map(|_| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let rows: Vec<(Vec<(usize, f64)>, usize)> = par.map(n, |i| {
        let base = key(i);
        let mut row = vec![(i, 1.0)];
        let mut dup = 0;
        for off in &offsets {
            let k: Vec<i64> = base.iter().zip(off).map(|(a, b)| a + b).collect();
            if let Some(members) = buckets.get(&k) {
                for &j in members {
                    if j == i {
                        continue;
                    }
                    let d = points.distance(i, j);
                    if d == 0.0 && j < i {
                        dup += 1;
                    }
                    let v = kernel.value_unchecked(d);
                    if v != 0.0 {
                        row.push((j, v));
                    }
                }
            }
        }
        (row, dup)
    });
    let duplicates = rows.iter().map(|r| r.1).sum();
    let csr = Csr::from_rows(n, rows.into_iter().map(|r| r.0).collect());
    let density = csr.density();
    Ok(CorrelationMatrix {
        storage: CorrelationStorage::Sparse(csr),
        diagnostics: AssemblyDiagnostics { duplicate_pairs: duplicates, density },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_round_trip() {
        for spec in ["exp:0.1", "matern:0.2:1.5", "gauss:0.3", "exp:0.005:taper=0.03"] {
            let k: CorrelationKernel = spec.parse().unwrap();
            assert_eq!(k.to_string(), spec);
        }
        assert!("exp:-1".parse::<CorrelationKernel>().is_err());
        assert!("cubic:1".parse::<CorrelationKernel>().is_err());
        assert!("matern:0.1".parse::<CorrelationKernel>().is_err());
    }

    #[test]
    fn zero_distance_is_one() {
        for k in [
            CorrelationKernel::exponential(0.1),
            CorrelationKernel::matern(0.2, 1.3),
            CorrelationKernel::matern(0.2, 2.5),
            CorrelationKernel::gaussian(0.3),
        ] {
            assert_eq!(k.value(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn exponential_closed_form() {
        let k = CorrelationKernel::exponential(0.1);
        assert!((k.value(0.1).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn half_integer_forms() {
        for &d in &[0.01, 0.1, 0.5, 2.0] {
            let a = 0.3;
            let x32 = 3f64.sqrt() * d / a;
            let want32 = (1.0 + x32) * (-x32).exp();
            let x52 = 5f64.sqrt() * d / a;
            let want52 = (1.0 + x52 + x52 * x52 / 3.0) * (-x52).exp();
            assert!((CorrelationKernel::matern(a, 1.5).value(d).unwrap() - want32).abs() < 1e-14);
            assert!((CorrelationKernel::matern(a, 2.5).value(d).unwrap() - want52).abs() < 1e-14);
        }
    }

    #[test]
    fn general_order_continuous_across_half_integers() {
        // The Bessel route just off a half-integer must agree with the closed form.
        for &d in &[0.02, 0.2, 0.7] {
            let exact = CorrelationKernel::matern(0.25, 2.5).value(d).unwrap();
            let near = CorrelationKernel::matern(0.25, 2.5 + 1e-9).value(d).unwrap();
            assert!((exact - near).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_inputs() {
        let k = CorrelationKernel::exponential(0.1);
        assert!(k.value(f64::NAN).is_err());
        assert!(k.value(-1.0).is_err());
        assert!(CorrelationKernel::exponential(0.0).value(0.1).is_err());
        assert!(CorrelationKernel::matern(0.1, 0.0).value(0.1).is_err());
        assert!(CorrelationKernel::exponential(0.1).with_taper(1.0).validate().is_err());
    }

    #[test]
    fn tapering_cuts_small_values() {
        let k = CorrelationKernel::exponential(0.1).with_taper(0.03);
        let r = k.support_radius().unwrap();
        assert_eq!(k.value(r * 1.0001).unwrap(), 0.0);
        assert!(k.value(r * 0.999).unwrap() > 0.03);
    }

    #[test]
    fn duplicates_are_flagged() {
        let pts = Points::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let k = correlation_matrix(&pts, &CorrelationKernel::exponential(0.5), Parallelism::Sequential).unwrap();
        assert_eq!(k.diagnostics.duplicate_pairs, 1);
        assert_eq!(k.to_dense()[(0, 1)], 1.0);
    }
}
