//! The immutable regression problem and the variance hyperparameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{build_design, BasisSpec, DesignMatrix};
use crate::error::{input, Error, Result};
use crate::kernels::{correlation_matrix, CorrelationKernel, CorrelationMatrix, Points};
use crate::par::Parallelism;

/// Relative size of the projected residual below which `z` counts as lying
/// in the range of the design matrix.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Observations, design, correlation matrix and coordinates.
#[derive(Debug, Clone)]
pub struct GpModel {
    z: DVector<f64>,
    design: DesignMatrix,
    k: CorrelationMatrix,
    points: Points,
    kernel: CorrelationKernel,
    /// `Qz`, the residual of ordinary least squares.
    q_residual: DVector<f64>,
    degenerate: bool,
}

impl GpModel {
    /// Assembles the correlation matrix and the design for `points`.
    pub fn build(
        points: Points,
        z: Vec<f64>,
        basis: BasisSpec,
        kernel: CorrelationKernel,
        par: Parallelism,
    ) -> Result<Self> {
        let design = build_design(&points, basis)?;
        let k = correlation_matrix(&points, &kernel, par)?;
        GpModel::from_parts(points, DVector::from_vec(z), design, k, kernel)
    }

    pub fn from_parts(
        points: Points,
        z: DVector<f64>,
        design: DesignMatrix,
        k: CorrelationMatrix,
        kernel: CorrelationKernel,
    ) -> Result<Self> {
        let n = z.len();
        if n != design.n() || n != k.n() || n != points.len() {
            return input(format!(
                "inconsistent sizes: z has {n}, X has {}, K has {}, points {}",
                design.n(),
                k.n(),
                points.len()
            ));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return input("observations must be finite");
        }
        let q_residual = project_out(design.matrix(), &z)?;
        let degenerate = q_residual.norm() <= DEGENERACY_TOL * z.norm();
        Ok(GpModel { z, design, k, points, kernel, q_residual, degenerate })
    }

    /// Same data and design with a different kernel.
    pub fn with_kernel(&self, kernel: CorrelationKernel, par: Parallelism) -> Result<Self> {
        let k = correlation_matrix(&self.points, &kernel, par)?;
        Ok(GpModel { k, kernel, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn m(&self) -> usize {
        self.design.m()
    }

    /// Residual degrees of freedom `n − m`.
    pub fn dof(&self) -> f64 {
        (self.n() - self.m()) as f64
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        self.design.matrix()
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn k(&self) -> &CorrelationMatrix {
        &self.k
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn kernel(&self) -> &CorrelationKernel {
        &self.kernel
    }

    /// True when `z` lies in the range of `X`, so every residual vanishes.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `Qz` with `Q = I − X(XᵀX)⁻¹Xᵀ`.
    pub fn q_residual(&self) -> &DVector<f64> {
        &self.q_residual
    }

    /// `‖z‖²_Q = zᵀQz`.
    pub fn z_q_norm_sq(&self) -> f64 {
        self.q_residual.norm_squared()
    }

    /// `Qv` for an arbitrary vector.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        project_out(self.x(), v)
    }

    /// `log det(XᵀX)`.
    pub fn log_det_xtx(&self) -> Result<f64> {
        let xtx = self.x().transpose() * self.x();
        let c = xtx.cholesky().ok_or_else(|| Error::Model("XᵀX is singular".into()))?;
        Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

/// `v − X (XᵀX)⁻¹ Xᵀ v` through a QR factorization of `X`.
fn project_out(x: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let q = qr.q();
    let coef = q.transpose() * v;
    Ok(v - q * coef)
}

/// Whether a hyperparameter set was estimated or supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Estimated,
    Fixed,
}

/// Error variance `σ²`, noise variance `σ₀²`, and their ratio `η = σ₀²/σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma2: f64,
    pub sigma02: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub eta: f64,
    pub provenance: Provenance,
}

impl HyperParams {
    /// From `σ²` and `η`; `η = ∞` requires `σ² = 0` and takes `σ₀²` separately.
    pub fn from_sigma2_eta(sigma2: f64, eta: f64, provenance: Provenance) -> Result<Self> {
        if !(sigma2 >= 0.0) || !(eta >= 0.0) || eta.is_infinite() {
            return input(format!("need sigma2 >= 0 and finite eta >= 0, got ({sigma2}, {eta})"));
        }
        Ok(HyperParams { sigma2, sigma02: eta * sigma2, eta, provenance })
    }

    /// Noise-only fit: `σ² = 0`, `η = ∞`.
    pub fn noise_only(sigma02: f64, provenance: Provenance) -> Self {
        HyperParams { sigma2: 0.0, sigma02, eta: f64::INFINITY, provenance }
    }

    /// From both variances; `η` follows.
    pub fn from_variances(sigma2: f64, sigma02: f64, provenance: Provenance) -> Result<Self> {
        if !(sigma2 >= 0.0) || !(sigma02 >= 0.0) {
            return input("variances must be non-negative");
        }
        if sigma2 == 0.0 && sigma02 == 0.0 {
            return input("both variances are zero");
        }
        let eta = if sigma2 == 0.0 { f64::INFINITY } else { sigma02 / sigma2 };
        Ok(HyperParams { sigma2, sigma02, eta, provenance })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma02.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Points {
        Points::new(2, (0..12).flat_map(|i| [(i % 4) as f64 / 3.0, (i / 4) as f64 / 2.0]).collect()).unwrap()
    }

    #[test]
    fn degenerate_detection() {
        let p = pts();
        let z: Vec<f64> = (0..12).map(|i| 1.0 + 2.0 * p.point(i)[0] - p.point(i)[1]).collect();
        let m = GpModel::build(p.clone(), z, BasisSpec::Polynomial(1), CorrelationKernel::exponential(0.3), Parallelism::Sequential).unwrap();
        assert!(m.is_degenerate());
        let z2: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let m2 = GpModel::build(p, z2, BasisSpec::Polynomial(1), CorrelationKernel::exponential(0.3), Parallelism::Sequential).unwrap();
        assert!(!m2.is_degenerate());
        assert!((m2.x().transpose() * m2.q_residual()).norm() < 1e-12);
    }

    #[test]
    fn size_mismatch_is_input_error() {
        let err = GpModel::build(pts(), vec![1.0; 5], BasisSpec::Polynomial(0), CorrelationKernel::exponential(0.3), Parallelism::Sequential);
        assert!(err.is_err());
    }

    #[test]
    fn hyperparams_identity() {
        let h = HyperParams::from_sigma2_eta(0.5, 4.0, Provenance::Fixed).unwrap();
        assert_eq!(h.sigma02, 2.0);
        let h = HyperParams::from_variances(0.0, 0.04, Provenance::Estimated).unwrap();
        assert!(h.eta.is_infinite());
        assert!(HyperParams::from_variances(0.0, 0.0, Provenance::Fixed).is_err());
        let json = serde_json::to_string(&h).unwrap();
        let back: HyperParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
    }
}
