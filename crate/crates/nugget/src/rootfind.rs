//! Chandrupatla's bracketing root finder: inverse quadratic interpolation
//! when the three latest points make it safe, bisection otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// A converged root with its final bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    /// Function evaluations made inside the iteration (the two bracket
    /// endpoints are not counted).
    pub iterations: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Root of `f` on `[lo, hi]`; stops when the bracket is narrower than
/// `x_tol` or `|f| ≤ f_tol`.
pub fn chandrupatla_root<F>(f: F, lo: f64, hi: f64, x_tol: f64, f_tol: f64, max_iter: usize) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut f = f;
    let flo = f(lo)?;
    let fhi = f(hi)?;
    chandrupatla_with_values(f, lo, flo, hi, fhi, x_tol, f_tol, max_iter)
}

/// Same as [`chandrupatla_root`] with the endpoint values already known.
#[allow(clippy::too_many_arguments)]
pub fn chandrupatla_with_values<F>(
    mut f: F,
    lo: f64,
    flo: f64,
    hi: f64,
    fhi: f64,
    x_tol: f64,
    f_tol: f64,
    max_iter: usize,
) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return input(format!("need a finite bracket lo < hi, got [{lo}, {hi}]"));
    }
    if !(x_tol > 0.0) || !(f_tol >= 0.0) {
        return input("tolerances must be positive");
    }
    if flo.is_nan() || fhi.is_nan() {
        return Err(Error::Numeric("function is NaN at a bracket endpoint".into()));
    }
    if flo == 0.0 {
        return Ok(Root { x: lo, fx: flo, iterations: 0, lo, hi: lo });
    }
    if fhi == 0.0 {
        return Ok(Root { x: hi, fx: fhi, iterations: 0, lo: hi, hi });
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    if flo.abs() <= f_tol {
        return Ok(Root { x: lo, fx: flo, iterations: 0, lo, hi });
    }
    if fhi.abs() <= f_tol {
        return Ok(Root { x: hi, fx: fhi, iterations: 0, lo, hi });
    }

    // `a` is the newest point, `b` the previous one on the other side of the
    // root, `c` the point discarded last.
    let (mut a, mut fa) = (hi, fhi);
    let (mut b, mut fb) = (lo, flo);
    let (mut c, mut fc);
    let mut t = 0.5;
    let half_tol = 0.5 * x_tol;
    for it in 1..=max_iter {
        let xt = a + t * (b - a);
        let ft = f(xt)?;
        if ft.is_nan() {
            return Err(Error::Numeric(format!("function is NaN at {xt}")));
        }
        if ft.signum() == fa.signum() {
            c = a;
            fc = fa;
        } else {
            c = b;
            fc = fb;
            b = a;
            fb = fa;
        }
        a = xt;
        fa = ft;
        let (xm, fm) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
        let tol = 2.0 * f64::EPSILON * xm.abs() + half_tol;
        let tlim = tol / (b - c).abs();
        if tlim > 0.5 || fm.abs() <= f_tol || fm == 0.0 {
            let (l, h) = if a < b { (a, b) } else { (b, a) };
            return Ok(Root { x: xm, fx: fm, iterations: it, lo: l, hi: h });
        }
        let xi = (a - b) / (c - b);
        let phi = (fa - fb) / (fc - fb);
        t = if phi * phi < xi && (1.0 - phi) * (1.0 - phi) < 1.0 - xi {
            fa / (fb - fa) * fc / (fb - fc) + (c - a) / (b - a) * fa / (fc - fa) * fb / (fc - fb)
        } else {
            0.5
        };
        t = t.clamp(tlim, 1.0 - tlim);
    }
    let (l, h) = if a < b { (a, b) } else { (b, a) };
    Err(Error::Convergence { iterations: max_iter, lo: l, hi: h })
}

/// Plain bisection with the same stopping rule, for comparison.
pub fn bisection<F>(mut f: F, lo: f64, hi: f64, x_tol: f64, max_iter: usize) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let fa0 = f(a)?;
    let fb0 = f(b)?;
    if fa0.signum() == fb0.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    let mut fa = fa0;
    for it in 1..=max_iter {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm == 0.0 || 0.5 * (b - a) < x_tol {
            return Ok(Root { x: mid, fx: fm, iterations: it, lo: a, hi: b });
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Err(Error::Convergence { iterations: max_iter, lo: a, hi: b })
}
