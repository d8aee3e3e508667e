//! Acceptance suite: one line per criterion, then a single verdict.

mod common;

use std::cell::RefCell;
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use nugget::algebra::Solver;
use nugget::analysis::{derivative_bounds, spectrum_bounds};
use nugget::data::{generate_synthetic, Sampling};
use nugget::design::BasisSpec;
use nugget::estimate::{
    direct_optimize, estimate_variances, matern_builder, profile_optimize, EstimationConfig, EstimationReport,
    OptimizeOptions, Outcome, PriorSpec,
};
use nugget::kernels::{correlation_matrix, CorrelationKernel};
use nugget::likelihood::{
    d_ell_deta, error_only_variance, log_likelihood_variances, noise_only_variance, profile_ell, sigma2_hat,
};
use nugget::model::GpModel;
use nugget::nelder_mead::{nelder_mead, NelderMeadOptions};
use nugget::trace::{
    fit_tau_interpolant, trace_inv_cholesky, CholeskyTraces, EigenTraces, TraceMethod, DEFAULT_NODES,
};

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    let line = format!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    println!("{line}");
    Verdict { id, pass, detail }
}

fn config() -> EstimationConfig {
    EstimationConfig { parallelism: PAR, ..Default::default() }
}

fn reference_model(basis: BasisSpec) -> GpModel {
    let ds = generate_synthetic(2500, 0.2, 0, Sampling::Grid).unwrap();
    GpModel::build(ds.points, ds.z, basis, CorrelationKernel::exponential(0.1), PAR).unwrap()
}

fn reference_fit(model: &GpModel) -> (EstimationReport, f64) {
    let start = Instant::now();
    let r = estimate_variances(model, &config()).unwrap();
    (r, start.elapsed().as_secs_f64())
}

fn table1_quadratic(r: &EstimationReport, secs: f64) -> Verdict {
    let pass = r.outcome == Outcome::Interior
        && (0.185..=0.205).contains(&r.sigma0())
        && (1.0..=1.6).contains(&r.log10_eta())
        && secs < 60.0;
    verdict(
        "1 table-1 quadratic row",
        pass,
        format!(
            "sigma0 {:.4}, sigma {:.4}, log10 eta {:.4}, {:?}, {} evals, {secs:.1} s",
            r.sigma0(),
            r.sigma(),
            r.log10_eta(),
            r.outcome,
            r.n_ell_evals
        ),
    )
}

fn table1_trig() -> Verdict {
    let model = reference_model(BasisSpec::Trigonometric);
    let r = estimate_variances(&model, &config()).unwrap();
    let pass = r.outcome == Outcome::NoiseDominated && r.sigma() == 0.0 && (0.187..=0.207).contains(&r.sigma0());
    verdict("2 table-1 trigonometric row", pass, format!("{:?}, sigma {}, sigma0 {:.4}", r.outcome, r.sigma(), r.sigma0()))
}

fn figure1_structure(model: &GpModel, r: &EstimationReport) -> Verdict {
    let d = &r.diagnostics;
    let exact = r.log10_eta();
    let (Some(r1), Some(r2)) = (d.asymptote_roots_order1.last(), d.asymptote_roots_order2.last()) else {
        return verdict("3 figure-1 structure", false, format!("missing asymptote roots: {d:?}"));
    };
    let (g1, g2) = ((r1.log10() - exact).abs(), (r2.log10() - exact).abs());
    let solver = Solver::auto(model, PAR);
    let traces = CholeskyTraces::new(model.k(), PAR);
    let spec = spectrum_bounds(model.k(), PAR).unwrap();
    let grid = log_grid(1e-3, 1e3, 25);
    let outside = grid
        .iter()
        .filter(|&&eta| {
            let v = d_ell_deta(model, eta, &solver, &traces).unwrap();
            v.abs() > derivative_bounds(&spec, model.n(), model.m(), eta).0
        })
        .count();
    verdict(
        "3 figure-1 structure",
        r.outcome == Outcome::Interior && g2 < g1 && outside == 0,
        format!(
            "exact root 10^{exact:.3}, order-1 root 10^{:.3}, order-2 root 10^{:.3}, {outside}/{} grid points outside the bounds",
            r1.log10(),
            r2.log10(),
            grid.len()
        ),
    )
}

fn efficiency() -> Verdict {
    let ds = generate_synthetic(900, 0.2, 0, Sampling::Grid).unwrap();
    let model = GpModel::build(ds.points, ds.z, BasisSpec::Polynomial(2), CorrelationKernel::exponential(0.1), PAR).unwrap();
    let prof = estimate_variances(&model, &config()).unwrap();
    let solver = Solver::auto(&model, PAR);
    let s = noise_only_variance(&model);
    let history = RefCell::new(Vec::new());
    let nm = nelder_mead(
        |x| {
            let f = if x[0] < 0.0 || x[1] < 0.0 {
                f64::INFINITY
            } else {
                log_likelihood_variances(&model, x[0], x[1], &solver).map_or(f64::INFINITY, |v| -v)
            };
            history.borrow_mut().push((f, [x[0], x[1]]));
            f
        },
        &[0.5 * s, 0.5 * s],
        &NelderMeadOptions { x_tol: 1e-6, f_tol: 1e-6, max_evals: 4000 },
    )
    .unwrap();
    let close = |x: &[f64; 2]| {
        (x[0].max(0.0).sqrt() - prof.sigma()).abs() <= 1e-3 && (x[1].max(0.0).sqrt() - prof.sigma0()).abs() <= 1e-3
    };
    // Evaluations until the best point so far stays within tolerance.
    let mut best = (f64::INFINITY, [f64::NAN; 2]);
    let mut reached = None;
    for (i, (f, x)) in history.borrow().iter().enumerate() {
        if *f < best.0 {
            best = (*f, *x);
        }
        match (close(&best.1), reached) {
            (true, None) => reached = Some(i + 1),
            (false, _) => reached = None,
            _ => {}
        }
    }
    let final_ok = close(&[nm.x[0], nm.x[1]]);
    let pass = prof.outcome == Outcome::Interior
        && prof.n_ell_evals <= 30
        && final_ok
        && reached.is_some_and(|k| k >= 100);
    verdict(
        "4 evaluation count",
        pass,
        format!(
            "profiled {} evals (sigma {:.4}, sigma0 {:.4}); direct reached 1e-3 after {:?} of {} evals, final sigma {:.4}, sigma0 {:.4}",
            prof.n_ell_evals,
            prof.sigma(),
            prof.sigma0(),
            reached,
            nm.n_evals,
            nm.x[0].sqrt(),
            nm.x[1].sqrt()
        ),
    )
}

fn root_iterations(r: &EstimationReport) -> Verdict {
    let accepted = r.diagnostics.roots.iter().find(|root| root.eta == r.hyperparams.eta);
    let pass = accepted.is_some_and(|root| root.iterations < 10);
    verdict(
        "5 root iterations",
        pass,
        format!("accepted root iterations {:?}, x_tol 1e-6 in log10 eta", accepted.map(|root| root.iterations)),
    )
}

fn kernel_optimization() -> Verdict {
    let ds = generate_synthetic(900, 0.2, 0, Sampling::Grid).unwrap();
    let base = GpModel::build(ds.points, ds.z, BasisSpec::Polynomial(2), CorrelationKernel::exponential(0.1), PAR).unwrap();
    let builder = matern_builder(&base, PAR);
    let opts = OptimizeOptions { tol: 1e-4, max_evals: 2000 };
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, priors) in [("uniform", PriorSpec::uniform()), ("inverse-square", PriorSpec::inverse_square())] {
        let prof = profile_optimize(&builder, (0.1, 1.0), &priors, &opts, &config()).unwrap();
        let direct = direct_optimize(&builder, (0.1, 1.0, 0.05, 0.05), &priors, &opts, PAR).unwrap();
        let (alpha, nu) = (prof.alpha_hat.unwrap(), prof.nu_hat.unwrap());
        let ok = match name {
            "uniform" => nu >= 24.9 && (0.19..=0.215).contains(&prof.sigma0()),
            _ => (2.0..=5.0).contains(&nu),
        } && prof.ell_max >= direct.ell_max - 1e-6;
        pass &= ok;
        parts.push(format!(
            "{name}: alpha {alpha:.4}, nu {nu:.4}, sigma {:.4}, sigma0 {:.4}, posterior {:.4} in {} evals; direct posterior {:.4} in {} evals",
            prof.sigma(),
            prof.sigma0(),
            prof.ell_max,
            prof.n_ell_evals,
            direct.ell_max,
            direct.n_ell_evals
        ));
    }
    verdict("6 kernel optimization", pass, parts.join("; "))
}

fn gradient_oracle() -> Verdict {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let model = instance(30, 2000 + seed, BasisSpec::Polynomial(1));
        let solver = Solver::auto(&model, PAR);
        let traces = EigenTraces::new(model.k()).unwrap();
        for eta in log_grid(1e-3, 1e3, 20) {
            let e = profile_ell(&model, eta, &solver, &traces).unwrap();
            let (fd1, fd2) = dd_fd_derivatives(&model, eta, 1e-4);
            worst.0 = worst.0.max(rel_err(e.d_ell, fd1));
            worst.1 = worst.1.max(rel_err(e.d2_ell.unwrap(), fd2));
        }
    }
    verdict(
        "7 gradient oracle",
        worst.0 < 1e-5 && worst.1 < 1e-4,
        format!("worst relative error: first {:.2e}, second {:.2e}", worst.0, worst.1),
    )
}

fn g_and_h(m1: &DMatrix<f64>, dof: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let m2 = m1 * m1;
    let (t1, t2) = (m1.trace() / dof, m2.trace() / dof);
    (m1 * t1 - &m2, m1 * (t2 + t1 * t1) - &m2 * m1 * 2.0)
}

fn dense_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    let mut zero_counts_ok = true;
    let mut indefinite = true;
    for seed in 0..10 {
        let n = 5 + (seed as usize % 4);
        let model = instance(n, 2100 + seed, BasisSpec::Polynomial(1));
        let solver = Solver::auto(&model, PAR);
        let traces = EigenTraces::new(model.k()).unwrap();
        let z = model.z();
        for eta in [0.0, 0.03, 1.0, 20.0] {
            let e = profile_ell(&model, eta, &solver, &traces).unwrap();
            let m1 = oracle_m1(&model, eta);
            let m1 = (&m1 + m1.transpose()) * 0.5;
            let m1z = &m1 * z;
            let w = nugget::algebra::m1_apply(&model, eta, &solver).unwrap();
            let dof = model.dof();
            let (g, h) = g_and_h(&m1, dof);
            let zhz = (e.trace_m1_sq.unwrap() / dof + (e.trace_m1 / dof).powi(2)) * e.zm1z - 2.0 * e.zm3z.unwrap();
            let errs = [
                rel_err(e.ell, oracle_profile_ell(&model, eta)),
                rel_err(sigma2_hat(&model, eta, &solver).unwrap(), oracle_sigma2_hat(&model, eta)),
                (&w - &m1z).amax() / m1z.amax(),
                rel_err(e.trace_m1, m1.trace()),
                (z.dot(&(&g * z)) + 2.0 * e.sigma2_hat * e.d_ell).abs() / (e.zm2z.abs() + e.zm1z.abs()),
                rel_err(zhz, z.dot(&(&h * z))),
            ];
            worst = errs.iter().fold(worst, |a, b| a.max(*b));
            let psi = symmetric_eigs(&m1);
            let tol = 1e-10 * psi.last().unwrap();
            zero_counts_ok &= psi.iter().filter(|v| v.abs() <= tol).count() == model.m();
            if eta > 0.0 {
                for mat in [g, h] {
                    let ev = symmetric_eigs(&mat);
                    let s = ev.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                    indefinite &= ev.iter().any(|v| *v > 1e-10 * s) && ev.iter().any(|v| *v < -1e-10 * s);
                }
            }
        }
    }
    verdict(
        "8 dense-oracle equivalence",
        worst < 1e-8 && zero_counts_ok && indefinite,
        format!("worst relative error {worst:.2e}, m zero eigenvalues {zero_counts_ok}, G/H indefinite {indefinite}"),
    )
}

fn trace_interpolation() -> Verdict {
    let ds = generate_synthetic(500, 0.2, 0, Sampling::UniformRandom).unwrap();
    let k = correlation_matrix(&ds.points, &CorrelationKernel::exponential(0.1), PAR).unwrap();
    let interp = fit_tau_interpolant(&k, &DEFAULT_NODES, TraceMethod::Cholesky, PAR).unwrap();
    let upper = fit_tau_interpolant(&k, &[], TraceMethod::Cholesky, PAR).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    let mut below = 0;
    for eta in log_grid(1e-3, 1e3, 61) {
        let exact = trace_inv_cholesky(&k, eta, PAR).unwrap();
        let err = rel_err(interp.trace(eta), exact);
        if err > worst.0 {
            worst = (err, eta);
        }
        if upper.trace(eta) < exact * (1.0 - 1e-12) {
            below += 1;
        }
    }
    verdict(
        "9 trace interpolation",
        worst.0 < 0.01 && below == 0,
        format!(
            "nodes {:?}: worst relative error {:.2e} at eta {:.2e}; zero-node form below the exact trace at {below}/61 points",
            DEFAULT_NODES, worst.0, worst.1
        ),
    )
}

fn limit_identities() -> Verdict {
    let mut worst = [0.0f64; 3];
    let mut r = rng(2200);
    for seed in 0..5 {
        let model = instance(20, 2210 + seed, BasisSpec::Polynomial(1));
        let solver = Solver::auto(&model, PAR);
        let (n, z, x) = (model.n(), model.z(), model.x());
        let kinv = inv(&kernel_dense(&model));
        let p = DMatrix::identity(n, n) - x * inv(&(x.transpose() * &kinv * x)) * x.transpose() * &kinv;
        let at_zero = z.dot(&(&kinv * &p * z)) / model.dof();
        worst[0] = worst[0].max(rel_err(error_only_variance(&model, &solver).unwrap(), at_zero));
        let at_inf = z.dot(&(oracle_q(&model) * z)) / model.dof();
        worst[1] = worst[1].max(rel_err(1e8 * sigma2_hat(&model, 1e8, &solver).unwrap(), at_inf));
        // ‖z − Xβ‖²_{Σ⁻¹} = ‖z‖²_M + ‖β − β̂‖²_{XᵀΣ⁻¹X} with Σ = K_η.
        use rand::Rng;
        let eta = 0.3;
        let beta = nalgebra::DVector::from_fn(model.m(), |_, _| r.random_range(-2.0..2.0));
        let si = inv(&k_eta(&model, eta));
        let res = z - x * &beta;
        let lhs = res.dot(&(&si * &res));
        let beta_hat = nugget::algebra::beta_gls(&model, eta, &solver).unwrap();
        let d = &beta - beta_hat;
        let rhs = z.dot(&nugget::algebra::m1_apply(&model, eta, &solver).unwrap()) + d.dot(&(x.transpose() * &si * x * &d));
        worst[2] = worst[2].max(rel_err(lhs, rhs));
    }
    verdict(
        "10 limit identities",
        worst[0] < 1e-9 && worst[1] < 1e-3 && worst[2] < 1e-9,
        format!("error-only {:.2e}, noise-only {:.2e}, decomposition {:.2e}", worst[0], worst[1], worst[2]),
    )
}

fn dense_scaling() -> Verdict {
    let mut points = Vec::new();
    for n in [256usize, 1024, 4096] {
        let ds = generate_synthetic(n, 0.2, 0, Sampling::Grid).unwrap();
        let start = Instant::now();
        let model = GpModel::build(ds.points, ds.z, BasisSpec::Polynomial(2), CorrelationKernel::exponential(0.1), PAR).unwrap();
        estimate_variances(&model, &config()).unwrap();
        points.push(((n as f64).ln(), start.elapsed().as_secs_f64()));
    }
    // Least-squares slope of log time against log n.
    let k = points.len() as f64;
    let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / k, points.iter().map(|p| p.1.ln()).sum::<f64>() / k);
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    verdict(
        "dense scaling slope",
        (2.0..=3.0).contains(&slope),
        format!(
            "slope {slope:.2} from times {:?} s at n = 256, 1024, 4096",
            points.iter().map(|p| (p.1 * 1e3).round() / 1e3).collect::<Vec<_>>()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let reference = reference_model(BasisSpec::Polynomial(2));
    let (report, secs) = reference_fit(&reference);
    let verdicts = vec![
        table1_quadratic(&report, secs),
        table1_trig(),
        figure1_structure(&reference, &report),
        efficiency(),
        root_iterations(&report),
        kernel_optimization(),
        gradient_oracle(),
        dense_equivalence(),
        trace_interpolation(),
        limit_identities(),
        dense_scaling(),
    ];
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.pass).map(|v| format!("{}: {}", v.id, v.detail)).collect();
    println!("{} of {} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.join("\n"));
}
