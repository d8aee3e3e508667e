//! Design matrices of the linear mean model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernels::Points;

/// Basis family for the mean `Xβ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    /// All monomials up to total degree `q`, graded lexicographic.
    Polynomial(u32),
    /// `sin(πxₖ)`, `cos(πxₖ)` for each coordinate.
    Trigonometric,
}

impl BasisSpec {
    /// Column count for points of dimension `dim`.
    pub fn count(&self, dim: usize) -> usize {
        match *self {
            BasisSpec::Polynomial(q) => exponents(dim, q).len(),
            BasisSpec::Trigonometric => 2 * dim,
        }
    }
}

impl std::fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisSpec::Polynomial(q) => write!(f, "poly:{q}"),
            BasisSpec::Trigonometric => write!(f, "trig"),
        }
    }
}

impl std::str::FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("trig") || s.eq_ignore_ascii_case("trigonometric") {
            return Ok(BasisSpec::Trigonometric);
        }
        if let Some(q) = s.strip_prefix("poly:") {
            return q
                .parse::<u32>()
                .map(BasisSpec::Polynomial)
                .map_err(|_| Error::Input(format!("bad polynomial order in basis '{s}'")));
        }
        input(format!("unknown basis '{s}' (expected poly:<q> or trig)"))
    }
}

/// `n × m` design matrix with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Wraps a tabulated matrix after checking `m < n` and full column rank.
    pub fn from_matrix(x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != x.ncols() {
            return input("one label per design column is required");
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("design matrix has non-finite entries");
        }
        if x.ncols() == 0 || x.ncols() >= x.nrows() {
            return Err(Error::Model(format!(
                "design needs 0 < m < n, got m = {} and n = {}",
                x.ncols(),
                x.nrows()
            )));
        }
        check_rank(&x, &labels)?;
        Ok(DesignMatrix { x, labels })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Smallest singular value.
    pub fn min_singular_value(&self) -> f64 {
        let sv = self.x.clone().svd(false, false).singular_values;
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

type BasisFn = Box<dyn Fn(&[f64]) -> f64>;

/// Evaluates the basis at every point and checks the rank.
pub fn build_design(points: &Points, spec: BasisSpec) -> Result<DesignMatrix> {
    let n = points.len();
    let dim = points.dim();
    let (columns, labels): (Vec<BasisFn>, Vec<String>) = match spec {
        BasisSpec::Polynomial(q) => exponents(dim, q)
            .into_iter()
            .map(|e| {
                let label = monomial_label(&e);
                let f: BasisFn =
                    Box::new(move |p: &[f64]| e.iter().zip(p).map(|(k, x)| x.powi(*k as i32)).product());
                (f, label)
            })
            .unzip(),
        BasisSpec::Trigonometric => (0..dim)
            .flat_map(|k| {
                let s: BasisFn = Box::new(move |p: &[f64]| (std::f64::consts::PI * p[k]).sin());
                let c: BasisFn = Box::new(move |p: &[f64]| (std::f64::consts::PI * p[k]).cos());
                [(s, format!("sin(pi x{})", k + 1)), (c, format!("cos(pi x{})", k + 1))]
            })
            .unzip(),
    };
    let m = columns.len();
    if n <= m {
        return Err(Error::Model(format!("basis {spec} has {m} columns but only {n} points")));
    }
    let x = DMatrix::from_fn(n, m, |i, j| columns[j](points.point(i)));
    DesignMatrix::from_matrix(x, labels)
}

/// Exponent tuples of total degree ≤ q in graded lexicographic order:
/// for d = 2 this is 1, x₁, x₂, x₁², x₁x₂, x₂², …
pub fn exponents(dim: usize, q: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 0..=q {
        let mut cur = vec![0u32; dim];
        push_degree(dim, deg, 0, &mut cur, &mut out);
    }
    out
}

fn push_degree(dim: usize, remaining: u32, k: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if k + 1 == dim {
        cur[k] = remaining;
        out.push(cur.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        cur[k] = e;
        push_degree(dim, remaining - e, k + 1, cur, out);
    }
}

fn monomial_label(e: &[u32]) -> String {
    let parts: Vec<String> = e
        .iter()
        .enumerate()
        .filter(|(_, k)| **k > 0)
        .map(|(i, k)| if *k == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, k) })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

fn rank_tolerance(x: &DMatrix<f64>, smax: f64) -> f64 {
    x.nrows() as f64 * smax * 1e-12
}

fn numerical_rank(x: &DMatrix<f64>) -> (usize, f64) {
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = rank_tolerance(x, smax);
    (sv.iter().filter(|s| **s > tol).count(), tol)
}

fn check_rank(x: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let (rank, _) = numerical_rank(x);
    if rank == x.ncols() {
        return Ok(());
    }
    // Name the first column that adds nothing to the span of its predecessors.
    for j in 1..=x.ncols() {
        let lead = x.columns(0, j).into_owned();
        if numerical_rank(&lead).0 < j {
            return Err(Error::Model(format!(
                "design matrix is rank deficient (rank {rank} < {}); basis function '{}' is linearly dependent on earlier ones",
                x.ncols(),
                labels[j - 1]
            )));
        }
    }
    Err(Error::Model(format!("design matrix is rank deficient (rank {rank} < {})", x.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: usize) -> Points {
        let mut c = Vec::new();
        for i in 0..k {
            for j in 0..k {
                c.push(i as f64 / (k - 1) as f64);
                c.push(j as f64 / (k - 1) as f64);
            }
        }
        Points::new(2, c).unwrap()
    }

    #[test]
    fn graded_lex_order() {
        let e = exponents(2, 2);
        assert_eq!(e, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn column_counts() {
        for q in 0..=6u32 {
            assert_eq!(BasisSpec::Polynomial(q).count(2), ((q + 1) * (q + 2) / 2) as usize);
        }
        assert_eq!(BasisSpec::Trigonometric.count(2), 4);
    }

    #[test]
    fn constant_basis() {
        let d = build_design(&grid(4), BasisSpec::Polynomial(0)).unwrap();
        assert_eq!(d.m(), 1);
        assert!(d.matrix().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn trig_columns() {
        let pts = Points::new(2, vec![0.5, 0.25, 0.1, 0.9, 0.3, 0.3, 0.7, 0.2, 0.0, 1.0]).unwrap();
        let d = build_design(&pts, BasisSpec::Trigonometric).unwrap();
        assert_eq!(d.m(), 4);
        let pi = std::f64::consts::PI;
        assert!((d.matrix()[(0, 0)] - (pi * 0.5).sin()).abs() < 1e-15);
        assert!((d.matrix()[(0, 3)] - (pi * 0.25).cos()).abs() < 1e-15);
        assert_eq!(d.labels()[1], "cos(pi x1)");
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts = Points::new(2, (0..10).flat_map(|i| [i as f64 / 9.0, 0.5]).collect()).unwrap();
        let err = build_design(&pts, BasisSpec::Polynomial(1)).unwrap_err();
        assert!(err.to_string().contains("'x2'"), "{err}");
    }

    #[test]
    fn parse_round_trip() {
        for s in ["poly:0", "poly:3", "trig"] {
            assert_eq!(s.parse::<BasisSpec>().unwrap().to_string(), s);
        }
        assert!("poly:x".parse::<BasisSpec>().is_err());
    }
}
