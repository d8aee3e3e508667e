//! Shared fixtures and explicit dense oracles for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nugget::design::{build_design, BasisSpec};
use nugget::kernels::{correlation_matrix, CorrelationKernel, CorrelationMatrix, CorrelationStorage, Points};
use nugget::model::GpModel;
use nugget::par::Parallelism;

pub const PAR: Parallelism = Parallelism::Threads;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random points in the unit square.
pub fn random_points(n: usize, seed: u64) -> Points {
    let mut r = rng(seed);
    let coords: Vec<f64> = (0..2 * n).map(|_| r.random::<f64>()).collect();
    Points::new(2, coords).unwrap()
}

/// Smooth signal plus noise at `points`, with correlated and white parts.
pub fn random_z(points: &Points, noise: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let (a, b, c) = (r.random_range(0.5..2.0), r.random_range(0.5..2.0), r.random_range(0.0..PI));
    (0..points.len())
        .map(|i| {
            let p = points.point(i);
            let e: f64 = r.random_range(-1.0..1.0);
            (a * PI * p[0] + c).sin() + (b * PI * p[1]).cos() + noise * 1.7 * e
        })
        .collect()
}

/// A small random model with an exponential kernel.
pub fn instance(n: usize, seed: u64, basis: BasisSpec) -> GpModel {
    let mut r = rng(seed.wrapping_mul(7919));
    let alpha = r.random_range(0.1..0.5);
    let noise = r.random_range(0.05..0.5);
    let points = random_points(n, seed);
    let z = random_z(&points, noise, seed);
    GpModel::build(points, z, basis, CorrelationKernel::exponential(alpha), PAR).unwrap()
}

/// Model with an arbitrary dense SPD matrix in place of the kernel matrix.
pub fn model_with_matrix(k: DMatrix<f64>, x: DMatrix<f64>, z: Vec<f64>) -> GpModel {
    let n = k.nrows();
    let points = random_points(n, 1);
    let labels = (0..x.ncols()).map(|j| format!("c{j}")).collect();
    let design = nugget::design::DesignMatrix::from_matrix(x, labels).unwrap();
    let k = CorrelationMatrix { storage: CorrelationStorage::Dense(k), diagnostics: Default::default() };
    GpModel::from_parts(points, DVector::from_vec(z), design, k, CorrelationKernel::exponential(1.0)).unwrap()
}

/// Random SPD matrix `AAᵀ/n + δI`.
pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn kernel_dense(model: &GpModel) -> DMatrix<f64> {
    model.k().to_dense()
}

pub fn k_eta(model: &GpModel, eta: f64) -> DMatrix<f64> {
    kernel_dense(model) + DMatrix::identity(model.n(), model.n()) * eta
}

pub fn inv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().expect("invertible")
}

/// `P = I − X(XᵀΣ⁻¹X)⁻¹XᵀΣ⁻¹` for `Σ = K_η`.
pub fn oracle_projection(model: &GpModel, eta: f64) -> DMatrix<f64> {
    let si = inv(&k_eta(model, eta));
    let x = model.x();
    let n = model.n();
    DMatrix::identity(n, n) - x * inv(&(x.transpose() * &si * x)) * x.transpose() * &si
}

/// `M₁ = K_η⁻¹P`.
pub fn oracle_m1(model: &GpModel, eta: f64) -> DMatrix<f64> {
    inv(&k_eta(model, eta)) * oracle_projection(model, eta)
}

pub fn log_det(a: &DMatrix<f64>) -> f64 {
    let lu = a.clone().lu();
    let d = lu.determinant();
    assert!(d > 0.0, "determinant must be positive");
    d.ln()
}

/// `ℓ` straight from the definition with `Σ = σ²K_η`:
/// `−(n−m)/2 log 2π − ½ log|Σ| − ½ log|XᵀΣ⁻¹X| − ½ zᵀMz`.
pub fn oracle_ell(model: &GpModel, sigma2: f64, eta: f64) -> f64 {
    let n = model.n();
    let m = model.m();
    let sigma = k_eta(model, eta) * sigma2;
    let si = inv(&sigma);
    let x = model.x();
    let xsx = x.transpose() * &si * x;
    let mm = &si * (DMatrix::identity(n, n) - x * inv(&xsx) * x.transpose() * &si);
    let z = model.z();
    -0.5 * (n - m) as f64 * (2.0 * PI).ln() - 0.5 * log_det(&sigma) - 0.5 * log_det(&xsx) - 0.5 * z.dot(&(&mm * z))
}

pub fn oracle_sigma2_hat(model: &GpModel, eta: f64) -> f64 {
    let z = model.z();
    z.dot(&(oracle_m1(model, eta) * z)) / model.dof()
}

pub fn oracle_profile_ell(model: &GpModel, eta: f64) -> f64 {
    oracle_ell(model, oracle_sigma2_hat(model, eta), eta)
}

/// `Q = I − X(XᵀX)⁻¹Xᵀ`.
pub fn oracle_q(model: &GpModel) -> DMatrix<f64> {
    let x = model.x();
    DMatrix::identity(model.n(), model.n()) - x * inv(&(x.transpose() * x)) * x.transpose()
}

pub fn symmetric_eigs(a: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..k).map(|i| 10f64.powf(a + (b - a) * i as f64 / (k - 1) as f64)).collect()
}

/// Kernel matrix of points on a `side × side` grid.
pub fn grid_kernel(side: usize, kernel: CorrelationKernel) -> CorrelationMatrix {
    let axis: Vec<f64> = (0..side).map(|i| i as f64 / (side - 1) as f64).collect();
    let coords: Vec<f64> = axis.iter().flat_map(|&a| axis.iter().flat_map(move |&b| [a, b])).collect();
    correlation_matrix(&Points::new(2, coords).unwrap(), &kernel, PAR).unwrap()
}

pub fn design(points: &Points, basis: BasisSpec) -> DMatrix<f64> {
    build_design(points, basis).unwrap().matrix().clone()
}

/// Double-double pieces of the profile likelihood at one `η`:
/// `|K_η|`, `|XᵀK_η⁻¹X|` and `zᵀM₁z`, from an `LDLᵀ` factorization.
pub struct DdParts {
    det_k: twofloat::TwoFloat,
    det_b: twofloat::TwoFloat,
    zm1z: twofloat::TwoFloat,
}

type Dd = twofloat::TwoFloat;

/// Quotient refined by two residual corrections; the crate's own division
/// stops at `f64` accuracy.
fn dd_div(a: Dd, b: Dd) -> Dd {
    let q0 = a.hi() / b.hi();
    let r = a - b * q0;
    let q1 = r.hi() / b.hi();
    let r = r - b * q1;
    Dd::from(q0) + q1 + r.hi() / b.hi()
}

/// Unit lower `L` and diagonal `D` with `A = LDLᵀ`.
fn dd_ldl(a: &[Vec<Dd>]) -> (Vec<Vec<Dd>>, Vec<Dd>) {
    let n = a.len();
    let mut l = vec![vec![Dd::from(0.0); n]; n];
    let mut d = vec![Dd::from(0.0); n];
    for j in 0..n {
        let mut s = a[j][j];
        for k in 0..j {
            s -= l[j][k] * l[j][k] * d[k];
        }
        d[j] = s;
        l[j][j] = Dd::from(1.0);
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k] * d[k];
            }
            l[i][j] = dd_div(s, d[j]);
        }
    }
    (l, d)
}

fn dd_forward(l: &[Vec<Dd>], v: &[Dd]) -> Vec<Dd> {
    let mut y = v.to_vec();
    for i in 0..y.len() {
        for k in 0..i {
            let t = l[i][k] * y[k];
            y[i] -= t;
        }
    }
    y
}

/// `uᵀA⁻¹v` given `L⁻¹u`, `L⁻¹v` and `D`.
fn dd_form(yu: &[Dd], yv: &[Dd], d: &[Dd]) -> Dd {
    yu.iter().zip(yv).zip(d).fold(Dd::from(0.0), |acc, ((a, b), di)| acc + dd_div(*a * *b, *di))
}

pub fn dd_parts(model: &GpModel, eta: f64) -> DdParts {
    let (n, m) = (model.n(), model.m());
    let k = kernel_dense(model);
    let a: Vec<Vec<Dd>> =
        (0..n).map(|i| (0..n).map(|j| Dd::from(k[(i, j)]) + if i == j { Dd::from(eta) } else { Dd::from(0.0) }).collect()).collect();
    let (l, d) = dd_ldl(&a);
    let det_k = d.iter().fold(Dd::from(1.0), |p, v| p * *v);
    let x = model.x();
    let yx: Vec<Vec<Dd>> = (0..m).map(|c| dd_forward(&l, &(0..n).map(|i| Dd::from(x[(i, c)])).collect::<Vec<_>>())).collect();
    let yz = dd_forward(&l, &model.z().iter().map(|v| Dd::from(*v)).collect::<Vec<_>>());
    let b: Vec<Vec<Dd>> = (0..m).map(|r| (0..m).map(|c| dd_form(&yx[r], &yx[c], &d)).collect()).collect();
    let c: Vec<Dd> = (0..m).map(|r| dd_form(&yx[r], &yz, &d)).collect();
    let (lb, db) = dd_ldl(&b);
    let det_b = db.iter().fold(Dd::from(1.0), |p, v| p * *v);
    let yc = dd_forward(&lb, &c);
    let zm1z = dd_form(&yz, &yz, &d) - dd_form(&yc, &yc, &db);
    DdParts { det_k, det_b, zm1z }
}

/// `ln(a/b)` for `a/b` near one.
fn dd_log_ratio(a: Dd, b: Dd) -> f64 {
    (dd_div(a, b) - 1.0).hi().ln_1p()
}

/// `ℓ(p) − ℓ(q)` for the profile likelihood, accurate to the last bits of
/// the difference.
pub fn dd_ell_change(model: &GpModel, p: &DdParts, q: &DdParts) -> f64 {
    -0.5 * model.dof() * dd_log_ratio(p.zm1z, q.zm1z)
        - 0.5 * dd_log_ratio(p.det_k, q.det_k)
        - 0.5 * dd_log_ratio(p.det_b, q.det_b)
}

/// Central differences `(dℓ/dη, d²ℓ/dη²)` from double-double likelihood
/// differences, with a power-of-two step near `rel·η`.
pub fn dd_fd_derivatives(model: &GpModel, eta: f64, rel: f64) -> (f64, f64) {
    let h = 2f64.powi((rel * eta).log2().round() as i32);
    let centre = dd_parts(model, eta);
    let step = |k: f64| dd_ell_change(model, &dd_parts(model, eta + k * h), &centre);
    let (up, down) = (step(1.0), step(-1.0));
    ((up - down) / (2.0 * h), (up + down) / (h * h))
}
