//! Synthetic data and the on-disk dataset format.
//!
//! Generator: `ChaCha20Rng::seed_from_u64(seed)`. With random sampling the
//! stream first yields `2n` uniforms for the points (`x₁, x₂` per point,
//! row by row), then `n` standard normals (`rand_distr::StandardNormal`)
//! scaled by `σ₀`. Grid points are `linspace(0, 1, √n)` in both axes with
//! `x₂` varying fastest.
//!
//! Files: CSV with header `x1,…,xd,z` and a JSON sidecar next to it
//! (same stem, `.json` extension). Floats are written in shortest
//! round-trip form, so a write/read cycle is bit-identical.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernels::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Grid,
    UniformRandom,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grid" => Ok(Sampling::Grid),
            "random" | "uniform" | "uniform_random" => Ok(Sampling::UniformRandom),
            other => input(format!("unknown sampling '{other}' (grid or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub sigma0_true: Option<f64>,
    pub seed: Option<u64>,
    pub sampling: Option<Sampling>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub z: Vec<f64>,
    pub meta: DatasetMeta,
}

/// `sin(πx₁) + sin(πx₂)`.
pub fn test_mean(x1: f64, x2: f64) -> f64 {
    (PI * x1).sin() + (PI * x2).sin()
}

/// `n` points in the unit square with `z = sin(πx₁) + sin(πx₂) + ε`,
/// `ε ~ N(0, σ₀²)`.
pub fn generate_synthetic(n: usize, sigma0: f64, seed: u64, sampling: Sampling) -> Result<Dataset> {
    if n == 0 {
        return input("n must be positive");
    }
    if !(sigma0 >= 0.0) || !sigma0.is_finite() {
        return input(format!("sigma0 must be finite and non-negative, got {sigma0}"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let coords: Vec<f64> = match sampling {
        Sampling::Grid => {
            let side = n.isqrt();
            if side * side != n {
                return input(format!("grid sampling needs a perfect square n, got {n}"));
            }
            let axis: Vec<f64> = if side == 1 {
                vec![0.0]
            } else {
                (0..side).map(|i| i as f64 / (side - 1) as f64).collect()
            };
            axis.iter().flat_map(|&a| axis.iter().flat_map(move |&b| [a, b])).collect()
        }
        Sampling::UniformRandom => (0..2 * n).map(|_| rng.random::<f64>()).collect(),
    };
    let z: Vec<f64> = coords
        .chunks_exact(2)
        .map(|p| {
            let e: f64 = rng.sample(StandardNormal);
            test_mean(p[0], p[1]) + sigma0 * e
        })
        .collect();
    Ok(Dataset {
        points: Points::new(2, coords)?,
        z,
        meta: DatasetMeta { n, d: 2, sigma0_true: Some(sigma0), seed: Some(seed), sampling: Some(sampling) },
    })
}

/// Sidecar path for a dataset CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// Writes the CSV and its sidecar.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let d = self.points.dim();
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("z".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.points.point(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.z[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        std::fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Reads a CSV whose header is `x1,…,xd,z`; the sidecar is optional.
    pub fn read(csv_path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(csv_path)?;
        let header = r.headers()?.clone();
        let cols = header.len();
        let expected: Vec<String> =
            (1..cols).map(|i| format!("x{i}")).chain(std::iter::once("z".to_string())).collect();
        if cols < 2 || header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
            return input(format!("{}: expected header {}", csv_path.display(), expected.join(",")));
        }
        let d = cols - 1;
        let mut coords = Vec::new();
        let mut z = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != cols {
                return input(format!("{}: row {} has {} fields", csv_path.display(), row + 2, rec.len()));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Input(format!("{}: row {} column {}: '{field}' is not a number", csv_path.display(), row + 2, j + 1))
                })?;
                if !v.is_finite() {
                    return input(format!("{}: row {} has a non-finite value", csv_path.display(), row + 2));
                }
                if j < d {
                    coords.push(v);
                } else {
                    z.push(v);
                }
            }
        }
        if z.is_empty() {
            return input(format!("{}: no data rows", csv_path.display()));
        }
        let sidecar = sidecar_path(csv_path);
        let meta = if sidecar.exists() {
            let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
            if meta.n != z.len() || meta.d != d {
                return input(format!("{}: metadata says n={}, d={} but the CSV has n={}, d={d}", sidecar.display(), meta.n, meta.d, z.len()));
            }
            meta
        } else {
            DatasetMeta { n: z.len(), d, sigma0_true: None, seed: None, sampling: None }
        };
        Ok(Dataset { points: Points::new(d, coords)?, z, meta })
    }
}
