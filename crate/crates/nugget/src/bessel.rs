//! Modified Bessel function of the second kind, `K_ν(x)`, for real `ν ≥ 0`.
//!
//! The order is split as `ν = μ + k` with `|μ| ≤ ½`. `K_μ` and `K_{μ+1}` come
//! from Temme's series when `x < 2` and from Steed's continued fraction
//! otherwise, then forward recurrence reaches `K_ν`. Everything is carried in
//! log-scaled form so tiny arguments and large orders neither overflow nor
//! underflow.

use statrs::function::gamma::gamma;
use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_TERMS: usize = 10_000;
const RESCALE: f64 = 1e200;

/// `K_ν(x)` for `x > 0`. Returns `+∞` at `x = 0` and `NaN` for invalid input.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    let lk = ln_bessel_k(nu, x);
    if lk.is_nan() {
        f64::NAN
    } else {
        lk.exp()
    }
}

/// `ln K_ν(x)`; `K_{−ν} = K_ν` so the sign of the order is ignored.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    if !(x >= 0.0) || !nu.is_finite() || x.is_nan() {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::INFINITY;
    }
    if x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let nu = nu.abs();
    let k = (nu + 0.5).floor();
    let mu = nu - k;
    let (ln_scale, mut kmu, mut kmu1) = if x < 2.0 { temme(mu, x) } else { steed(mu, x) };
    let mut ln_scale = ln_scale;
    let two_over_x = 2.0 / x;
    for i in 1..=(k as usize) {
        let next = (mu + i as f64) * two_over_x * kmu1 + kmu;
        kmu = kmu1;
        kmu1 = next;
        if kmu1 > RESCALE {
            kmu /= RESCALE;
            kmu1 /= RESCALE;
            ln_scale += RESCALE.ln();
        }
    }
    kmu.ln() + ln_scale
}

/// `1/Γ(1+μ)`, `1/Γ(1−μ)` and Temme's auxiliary `Γ₁`, `Γ₂`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam1 = if mu.abs() < 1e-3 {
        let m2 = mu * mu;
        -EULER_GAMMA + 0.042_002_635_034_095_2 * m2 + 0.042_197_734_555_544_3 * m2 * m2
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    let gam2 = 0.5 * (gammi + gampl);
    (gam1, gam2, gampl, gammi)
}

/// Series for small arguments: returns `(ln scale, K_μ, K_{μ+1})` unscaled (scale 0).
fn temme(mu: f64, x: f64) -> (f64, f64, f64) {
    let x2 = 0.5 * x;
    let pimu = PI * mu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    let mu2 = mu * mu;
    for i in 1..MAX_TERMS {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= dd / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (0.0, sum, sum1 * 2.0 / x)
}

/// Steed's continued fraction for `x ≥ 2`: returns values scaled by `eˣ`
/// together with `ln scale = −x`.
fn steed(mu: f64, x: f64) -> (f64, f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu * mu;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_TERMS {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h *= a1;
    let kmu = (PI / (2.0 * x)).sqrt() / s;
    let kmu1 = kmu * (mu + x + 0.5 - h) / x;
    (-x, kmu, kmu1)
}
