mod common;

use common::*;
use nugget::algebra::{Solver, SolverMethod};
use nugget::kernels::{correlation_matrix, CorrelationKernel, CorrelationMatrix};
use nugget::trace::{
    fit_tau_interpolant, trace_inv_cholesky, trace_inv_eigen, trace_inv_hutchinson, TraceInterpolant, TraceMethod,
    DEFAULT_NODES,
};
use nugget::Error;

fn kernel_matrix(n: usize, alpha: f64, seed: u64) -> CorrelationMatrix {
    correlation_matrix(&random_points(n, seed), &CorrelationKernel::exponential(alpha), PAR).unwrap()
}

fn dense_trace_inverse(k: &CorrelationMatrix, eta: f64) -> f64 {
    let mut a = k.to_dense();
    for i in 0..k.n() {
        a[(i, i)] += eta;
    }
    inv(&a).trace()
}

#[test]
fn exact_methods_agree_with_dense_inverse() {
    let k = kernel_matrix(120, 0.2, 800);
    for eta in [0.0, 1e-3, 0.5, 30.0] {
        let want = dense_trace_inverse(&k, eta);
        assert!(rel_err(trace_inv_eigen(&k, eta).unwrap(), want) < 1e-9);
        assert!(rel_err(trace_inv_cholesky(&k, eta, PAR).unwrap(), want) < 1e-9);
    }
}

#[test]
fn hutchinson_is_unbiased_within_three_standard_errors() {
    let k = kernel_matrix(300, 0.1, 801);
    let solver = Solver::new(SolverMethod::DenseCholesky, PAR);
    let eta = 0.1;
    let exact = trace_inv_eigen(&k, eta).unwrap();
    let trials = 100;
    let covered = (0..trials)
        .filter(|&t| {
            let (est, se) = trace_inv_hutchinson(&k, eta, &solver, 50, 1000 + t).unwrap();
            (est - exact).abs() <= 3.0 * se
        })
        .count();
    assert!(covered >= 95, "only {covered}/{trials} estimates within 3 standard errors");
}

#[test]
fn hutchinson_rejects_single_probe() {
    let k = kernel_matrix(20, 0.2, 802);
    let solver = Solver::new(SolverMethod::DenseCholesky, PAR);
    assert!(matches!(trace_inv_hutchinson(&k, 0.1, &solver, 1, 0), Err(Error::Input(_))));
    assert!(matches!(trace_inv_eigen(&k, -1.0), Err(Error::Input(_))));
}

#[test]
fn interpolant_reproduces_nodes_and_zero() {
    let k = kernel_matrix(200, 0.1, 803);
    let interp = fit_tau_interpolant(&k, &DEFAULT_NODES, TraceMethod::Eigen, PAR).unwrap();
    assert_eq!(interp.order(), DEFAULT_NODES.len());
    assert_eq!(interp.eval_tau(0.0), interp.tau0);
    assert!(rel_err(interp.tau0 * 200.0, trace_inv_eigen(&k, 0.0).unwrap()) < 1e-12);
    for (eta, tau) in interp.nodes.iter().zip(&interp.tau_values) {
        assert!(rel_err(interp.eval_tau(*eta), *tau) < 1e-8);
    }
    // 1/τ increasing over the node range.
    let grid = log_grid(DEFAULT_NODES[0], *DEFAULT_NODES.last().unwrap(), 200);
    assert!(grid.windows(2).all(|w| interp.eval_tau(w[1]) < interp.eval_tau(w[0])));
}

#[test]
fn interpolant_accuracy_from_first_node() {
    // Below the first node the fractional-power form has nothing to pin the
    // bend near λ₁; the full-range requirement lives in the acceptance suite.
    let k = kernel_matrix(500, 0.1, 804);
    let interp = fit_tau_interpolant(&k, &DEFAULT_NODES, TraceMethod::Cholesky, PAR).unwrap();
    let worst = log_grid(1.0, 1e3, 61)
        .into_iter()
        .map(|eta| rel_err(interp.trace(eta), trace_inv_cholesky(&k, eta, PAR).unwrap()))
        .fold(0.0, f64::max);
    assert!(worst < 0.01, "worst relative error {worst}");
}

#[test]
fn zero_node_form_is_an_upper_bound() {
    for seed in 0..3 {
        let k = kernel_matrix(150, 0.05 + 0.1 * seed as f64, 805 + seed);
        let interp = fit_tau_interpolant(&k, &[], TraceMethod::Eigen, PAR).unwrap();
        assert_eq!(interp.order(), 0);
        for eta in log_grid(1e-4, 1e4, 81) {
            let truth = trace_inv_eigen(&k, eta).unwrap() / 150.0;
            assert!(interp.eval_tau(eta) >= truth * (1.0 - 1e-12), "eta {eta}");
        }
    }
}

#[test]
fn large_shift_trace_approaches_n_over_eta() {
    let k = kernel_matrix(200, 0.1, 806);
    let interp = fit_tau_interpolant(&k, &DEFAULT_NODES, TraceMethod::Eigen, PAR).unwrap();
    let eta = 1e6;
    assert!(rel_err(interp.trace(eta), 200.0 / eta) < 0.05);
}

#[test]
fn identity_kernel_is_reproduced_exactly() {
    let n = 50;
    let id = CorrelationMatrix {
        storage: nugget::kernels::CorrelationStorage::Dense(nalgebra::DMatrix::identity(n, n)),
        diagnostics: Default::default(),
    };
    let interp = fit_tau_interpolant(&id, &[1.0, 10.0], TraceMethod::Eigen, PAR).unwrap();
    for eta in log_grid(1e-3, 1e3, 30) {
        assert!(rel_err(interp.eval_tau(eta), 1.0 / (1.0 + eta)) < 1e-10);
    }
    assert!(interp.weights[1..].iter().all(|w| w.abs() < 1e-10));
}

#[test]
fn invalid_nodes_are_rejected() {
    for nodes in [vec![1.0, 1.0], vec![-1.0], vec![10.0, 1.0], (1..=9).map(f64::from).collect()] {
        assert!(matches!(
            TraceInterpolant::from_values(10, 1.0, &nodes, &vec![0.5; nodes.len()], TraceMethod::Eigen),
            Err(Error::Input(_))
        ));
    }
}

#[test]
fn hutchinson_on_identity_is_exact() {
    let n = 40;
    let id = CorrelationMatrix {
        storage: nugget::kernels::CorrelationStorage::Dense(nalgebra::DMatrix::identity(n, n)),
        diagnostics: Default::default(),
    };
    let solver = Solver::new(SolverMethod::DenseCholesky, PAR);
    let (est, se) = trace_inv_hutchinson(&id, 0.5, &solver, 10, 3).unwrap();
    assert!(rel_err(est, n as f64 / 1.5) < 1e-14);
    assert!(se < 1e-12);
}
