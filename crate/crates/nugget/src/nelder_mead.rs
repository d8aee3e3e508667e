//! Nelder–Mead simplex minimization with the dimension-adaptive
//! coefficients of Gao and Han (2012).

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Largest allowed distance (max norm) of any vertex from the best one.
    pub x_tol: f64,
    /// Largest allowed spread of function values across the simplex.
    pub f_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { x_tol: 1e-4, f_tol: 1e-4, max_evals: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. Non-finite values are treated as `+∞`, so a
/// move into a forbidden region is simply rejected.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let k = x0.len();
    if k == 0 {
        return input("Nelder-Mead needs at least one variable");
    }
    let kf = k as f64;
    let rho = 1.0;
    let chi = 1.0 + 2.0 / kf;
    let psi = 0.75 - 1.0 / (2.0 * kf);
    let sigma = 1.0 - 1.0 / kf;

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let f0 = eval(x0, &mut evals);
    if !f0.is_finite() {
        return input("objective is not finite at the initial point");
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..k {
        let mut y = x0.to_vec();
        y[i] = if y[i] != 0.0 { 1.05 * y[i] } else { 0.00025 };
        let fy = eval(&y, &mut evals);
        simplex.push((y, fy));
    }

    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let f_spread = simplex[1..].iter().map(|(_, v)| (v - best.1).abs()).fold(0.0, f64::max);
        if x_spread <= opts.x_tol && f_spread <= opts.f_tol {
            return Ok(NelderMeadResult { x: best.0.clone(), f: best.1, n_evals: evals, iterations, converged: true });
        }
        if evals >= opts.max_evals {
            return Ok(NelderMeadResult { x: best.0.clone(), f: best.1, n_evals: evals, iterations, converged: false });
        }
        iterations += 1;

        let centroid: Vec<f64> =
            (0..k).map(|j| simplex[..k].iter().map(|(x, _)| x[j]).sum::<f64>() / kf).collect();
        let worst = simplex[k].clone();
        let toward = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let xr = toward(rho);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = toward(rho * chi);
            let fe = eval(&xe, &mut evals);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
            continue;
        }
        let shrink_needed = if fr < worst.1 {
            let xc = toward(psi * rho);
            let fc = eval(&xc, &mut evals);
            if fc <= fr {
                simplex[k] = (xc, fc);
                false
            } else {
                true
            }
        } else {
            let xcc = toward(-psi);
            let fcc = eval(&xcc, &mut evals);
            if fcc < worst.1 {
                simplex[k] = (xcc, fcc);
                false
            } else {
                true
            }
        };
        if shrink_needed {
            let x_best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = x_best.iter().zip(&vertex.0).map(|(b, v)| b + sigma * (v - b)).collect();
                let fx = eval(&x, &mut evals);
                *vertex = (x, fx);
            }
        }
    }
}
