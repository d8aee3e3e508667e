//! `nugget`: generate synthetic data, estimate variances and kernel
//! parameters, and emit the tables and curves used to study the estimator.
//!
//! Exit codes: 0 on success, 2 on input errors, 3 on numerical failures.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nugget::algebra::{Solver, SolverMethod, CG_TOL};
use nugget::analysis::{asymptote_coefficients, derivative_bounds, large_n_default, spectrum_bounds};
use nugget::data::{generate_synthetic, Dataset, Sampling};
use nugget::design::BasisSpec;
use nugget::estimate::{
    direct_variances, estimate_variances, matern_builder, profile_optimize, EstimationConfig, EstimationReport,
    OptimizeOptions, PriorSpec, Thresholds, TraceStrategy,
};
use nugget::kernels::CorrelationKernel;
use nugget::likelihood::{d_ell_deta, noise_only_variance};
use nugget::model::GpModel;
use nugget::par::Parallelism;
use nugget::trace::{
    fit_tau_interpolant, CholeskyTraces, EigenTraces, HutchinsonTraces, TraceInterpolant, TraceMethod, TraceProvider,
    DEFAULT_NODES,
};
use nugget::{Error, Result};

#[derive(Parser)]
#[command(name = "nugget", version, about = "Noise and error variance estimation for Gaussian process regression")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (CSV plus JSON sidecar).
    Generate(GenerateArgs),
    /// Estimate σ² and σ₀² (and optionally Matérn parameters).
    Estimate(EstimateArgs),
    /// σ̂ and σ̂₀ for polynomial bases of order 0..5 and the trigonometric basis.
    Table1(Table1Args),
    /// Wall time and evaluation counts of the profiled and direct methods.
    Benchmark(BenchmarkArgs),
    /// dℓ/dη with its bounds and asymptotes over a log grid.
    Plotdata(PlotArgs),
    /// Fit a trace interpolant, or inspect a saved one.
    TraceInterp(TraceInterpArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2500)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// grid or random.
    #[arg(long, default_value = "grid")]
    sampling: Sampling,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Dataset CSV with header x1,…,xd,z.
    #[arg(long)]
    data: PathBuf,
    /// poly:<q> or trig.
    #[arg(long, default_value = "poly:2")]
    basis: BasisSpec,
    /// exp:α, matern:α:ν or gauss:α, optionally :taper=κ.
    #[arg(long, default_value = "exp:0.1")]
    kernel: CorrelationKernel,
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Root tolerance in log₁₀ η.
    #[arg(long, default_value_t = 1e-6)]
    eta_tol: f64,
    /// Classification thresholds c,C.
    #[arg(long, default_value = "1e-4,1e4", value_parser = parse_thresholds)]
    thresholds: Thresholds,
    /// auto, eigen, cholesky or hutchinson[:k].
    #[arg(long, default_value = "auto")]
    trace_method: String,
    /// Interpolation nodes for the trace, e.g. 1,10,40,100,1000.
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<f64>>,
    /// auto, dense or cg.
    #[arg(long, default_value = "auto")]
    solver: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solve: SolveArgs,
    /// Also optimize the kernel; only `matern` is supported.
    #[arg(long)]
    optimize_kernel: Option<String>,
    /// uniform or inverse-square.
    #[arg(long, default_value = "uniform")]
    priors: PriorSpec,
    /// Initial α,ν for kernel optimization.
    #[arg(long, default_value = "0.1,1", value_delimiter = ',', num_args = 2)]
    init: Vec<f64>,
    /// Nelder–Mead tolerance for kernel optimization.
    #[arg(long, default_value_t = 1e-4)]
    nm_tol: f64,
    /// Report JSON path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table1Args {
    /// Existing dataset; generated from --n/--sigma0/--seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 2500)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma0: f64,
    #[arg(long, default_value = "exp:0.1")]
    kernel: CorrelationKernel,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, default_value = "256,1024,4096", value_delimiter = ',')]
    sizes: Vec<usize>,
    /// profiled, direct, or both.
    #[arg(long, default_value = "profiled,direct", value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long, default_value = "exp:0.1")]
    kernel: CorrelationKernel,
    #[arg(long, default_value = "poly:2")]
    basis: BasisSpec,
    #[arg(long, default_value_t = 0.2)]
    sigma0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-cell limit in seconds; slower cells are reported as missing.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 61)]
    points: usize,
    #[arg(long, default_value_t = 1e-3)]
    eta_min: f64,
    #[arg(long, default_value_t = 1e3)]
    eta_max: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceInterpArgs {
    /// Saved interpolant to inspect instead of fitting a new one.
    #[arg(long)]
    inspect: Option<PathBuf>,
    /// Dataset whose points define K (needed for fitting).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "exp:0.1")]
    kernel: CorrelationKernel,
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<f64>>,
    /// cholesky, eigen or hutchinson[:k].
    #[arg(long, default_value = "cholesky")]
    trace_method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid size for inspection output.
    #[arg(long, default_value_t = 25)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_thresholds(s: &str) -> std::result::Result<Thresholds, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [c, big_c] => Ok(Thresholds { lower: *c, upper: *big_c }),
        _ => Err("expected c,C".into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let par = match configure_threads(cli.jobs) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Estimate(a) => estimate(a, par),
        Command::Table1(a) => table1(a, par),
        Command::Benchmark(a) => benchmark(a, cli.jobs.unwrap_or(1), par),
        Command::Plotdata(a) => plotdata(a, par),
        Command::TraceInterp(a) => trace_interp(a, par),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_input() { 2 } else { 3 })
}

fn configure_threads(jobs: Option<usize>) -> Result<Parallelism> {
    match jobs {
        Some(0) => Err(Error::Input("--jobs must be at least 1".into())),
        Some(1) => Ok(Parallelism::Sequential),
        Some(j) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .map_err(|e| Error::Input(format!("cannot start {j} threads: {e}")))?;
            Ok(Parallelism::Threads)
        }
        None => Ok(Parallelism::Threads),
    }
}

/// Writes `content` to `out`, or stdout when no path is given.
fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn load_model(data: &Path, basis: BasisSpec, kernel: CorrelationKernel, par: Parallelism) -> Result<(Dataset, GpModel)> {
    let ds = Dataset::read(data)?;
    let model = GpModel::build(ds.points.clone(), ds.z.clone(), basis, kernel, par)?;
    Ok((ds, model))
}

fn solver_method(s: &str, model: &GpModel) -> Result<Option<SolverMethod>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "auto" => Ok(None),
        "dense" | "cholesky" => Ok(Some(SolverMethod::DenseCholesky)),
        "cg" => Ok(Some(SolverMethod::ConjugateGradient { tol: CG_TOL, max_iter: model.n().max(100) * 10 })),
        other => Err(Error::Input(format!("unknown solver '{other}' (auto, dense or cg)"))),
    }
}

fn estimation_config(a: &SolveArgs, model: &GpModel, par: Parallelism) -> Result<EstimationConfig> {
    let trace = match (a.trace_method.trim(), &a.nodes) {
        ("auto", None) => TraceStrategy::Auto,
        ("auto", Some(nodes)) => {
            TraceStrategy::Interpolated { method: TraceMethod::auto(model.k(), a.seed), nodes: nodes.clone() }
        }
        (m, None) => TraceStrategy::Exact { method: m.parse()? },
        (m, Some(nodes)) => TraceStrategy::Interpolated { method: m.parse()?, nodes: nodes.clone() },
    };
    let config = EstimationConfig {
        thresholds: a.thresholds,
        x_tol: a.eta_tol,
        trace,
        solver: solver_method(&a.solver, model)?,
        parallelism: par,
        seed: a.seed,
        ..EstimationConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ds = generate_synthetic(a.n, a.sigma0, a.seed, a.sampling)?;
    ds.write(&a.out)?;
    println!("wrote {} points to {}", ds.n(), a.out.display());
    Ok(())
}

fn summary(r: &EstimationReport) -> String {
    let mut s = format!(
        "sigma={:.6} sigma0={:.6} log10_eta={:.6} outcome={:?} ell={:.6} evals={}",
        r.sigma(),
        r.sigma0(),
        r.log10_eta(),
        r.outcome,
        r.ell_max,
        r.n_ell_evals
    );
    if let (Some(alpha), Some(nu)) = (r.alpha_hat, r.nu_hat) {
        s.push_str(&format!(" alpha={alpha:.6} nu={nu:.6}"));
    }
    s
}

fn estimate(a: EstimateArgs, par: Parallelism) -> Result<()> {
    let (_, model) = load_model(&a.model.data, a.model.basis, a.model.kernel, par)?;
    let config = estimation_config(&a.solve, &model, par)?;
    let report = match a.optimize_kernel.as_deref() {
        None => estimate_variances(&model, &config)?,
        Some("matern") => {
            let builder = matern_builder(&model, par);
            let opts = OptimizeOptions { tol: a.nm_tol, ..OptimizeOptions::default() };
            profile_optimize(&builder, (a.init[0], a.init[1]), &a.priors, &opts, &config)?
        }
        Some(other) => return Err(Error::Input(format!("cannot optimize kernel family '{other}' (only matern)"))),
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => {
            std::fs::write(p, json + "\n")?;
            println!("{}", summary(&report));
        }
        None => {
            eprintln!("{}", summary(&report));
            println!("{json}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Table1Row {
    basis: String,
    m: usize,
    sigma0: Option<f64>,
    log10_eta: Option<f64>,
    sigma_hat: Option<f64>,
    sigma0_hat: Option<f64>,
    rel_error: Option<f64>,
    outcome: String,
    status: String,
}

fn table1_rows(ds: &Dataset, kernel: CorrelationKernel, solve: &SolveArgs, par: Parallelism) -> Result<Vec<Table1Row>> {
    let bases: Vec<BasisSpec> = (0..=5).map(BasisSpec::Polynomial).chain(std::iter::once(BasisSpec::Trigonometric)).collect();
    let truth = ds.meta.sigma0_true;
    let mut rows = Vec::new();
    for basis in bases {
        let m = basis.count(ds.points.dim());
        let run = GpModel::build(ds.points.clone(), ds.z.clone(), basis, kernel, par)
            .and_then(|model| estimate_variances(&model, &estimation_config(solve, &model, par)?));
        rows.push(match run {
            Ok(r) => Table1Row {
                basis: basis.to_string(),
                m,
                sigma0: truth,
                log10_eta: Some(r.log10_eta()),
                sigma_hat: Some(r.sigma()),
                sigma0_hat: Some(r.sigma0()),
                rel_error: truth.filter(|t| *t > 0.0).map(|t| (r.sigma0() - t).abs() / t),
                outcome: format!("{:?}", r.outcome),
                status: "ok".into(),
            },
            Err(e) => Table1Row {
                basis: basis.to_string(),
                m,
                sigma0: truth,
                log10_eta: None,
                sigma_hat: None,
                sigma0_hat: None,
                rel_error: None,
                outcome: String::new(),
                status: format!("error: {e}"),
            },
        });
    }
    Ok(rows)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

fn table1(a: Table1Args, par: Parallelism) -> Result<()> {
    let ds = match &a.data {
        Some(p) => Dataset::read(p)?,
        None => generate_synthetic(a.n, a.sigma0, a.solve.seed, Sampling::Grid)?,
    };
    let rows = table1_rows(&ds, a.kernel, &a.solve, par)?;
    emit(a.out.as_deref(), &to_csv(&rows)?)
}

#[derive(Serialize, Clone)]
struct BenchRow {
    n: usize,
    method: String,
    wall_time_s: Option<f64>,
    n_evals: Option<usize>,
    sigma_hat: Option<f64>,
    sigma0_hat: Option<f64>,
    status: String,
}

fn bench_cell(n: usize, method: &str, a: &BenchmarkArgs, par: Parallelism) -> Result<BenchRow> {
    let side = n.isqrt();
    let sampling = if side * side == n { Sampling::Grid } else { Sampling::UniformRandom };
    let ds = generate_synthetic(n, a.sigma0, a.seed, sampling)?;
    let start = Instant::now();
    let model = GpModel::build(ds.points, ds.z, a.basis, a.kernel, par)?;
    let report = match method {
        "profiled" => estimate_variances(&model, &EstimationConfig { parallelism: par, seed: a.seed, ..Default::default() })?,
        "direct" => {
            let s = noise_only_variance(&model);
            let opts = OptimizeOptions { tol: 1e-6, max_evals: 4000 };
            direct_variances(&model, (0.5 * s, 0.5 * s), &opts, par)?
        }
        other => return Err(Error::Input(format!("unknown benchmark method '{other}' (profiled or direct)"))),
    };
    Ok(BenchRow {
        n,
        method: method.into(),
        wall_time_s: Some(start.elapsed().as_secs_f64()),
        n_evals: Some(report.n_ell_evals),
        sigma_hat: Some(report.sigma()),
        sigma0_hat: Some(report.sigma0()),
        status: if report.converged { "ok".into() } else { "not_converged".into() },
    })
}

fn benchmark(a: BenchmarkArgs, jobs: usize, par: Parallelism) -> Result<()> {
    for m in &a.methods {
        if m != "profiled" && m != "direct" {
            return Err(Error::Input(format!("unknown benchmark method '{m}' (profiled or direct)")));
        }
    }
    if a.timeout.is_nan() || a.timeout <= 0.0 {
        return Err(Error::Input("--timeout must be positive".into()));
    }
    let cells: Vec<(usize, String)> =
        a.sizes.iter().flat_map(|&n| a.methods.iter().map(move |m| (n, m.clone()))).collect();
    // Concurrent cells run single-threaded each; a lone cell may use the pool.
    let inner = if jobs > 1 { Parallelism::Sequential } else { par };
    let args = std::sync::Arc::new(a);
    let mut rows = Vec::new();
    for batch in cells.chunks(jobs.max(1)) {
        let pending: Vec<_> = batch
            .iter()
            .map(|(n, method)| {
                let (tx, rx) = mpsc::channel();
                let (n, name, args) = (*n, method.clone(), args.clone());
                std::thread::spawn(move || {
                    let _ = tx.send(bench_cell(n, &name, &args, inner));
                });
                (n, method.clone(), rx)
            })
            .collect();
        let deadline = Instant::now() + Duration::from_secs_f64(args.timeout);
        for (n, method, rx) in pending {
            let wait = deadline.saturating_duration_since(Instant::now());
            let missing = |status: String| BenchRow {
                n,
                method: method.clone(),
                wall_time_s: None,
                n_evals: None,
                sigma_hat: None,
                sigma0_hat: None,
                status,
            };
            rows.push(match rx.recv_timeout(wait) {
                Ok(Ok(row)) => row,
                Ok(Err(e)) => missing(format!("error: {e}")),
                Err(_) => missing("timeout".into()),
            });
        }
    }
    emit(args.out.as_deref(), &to_csv(&rows)?)
}

#[derive(Serialize)]
struct PlotRow {
    eta: f64,
    d_ell: f64,
    bound_lo: f64,
    bound_hi: f64,
    asymptote_1: Option<f64>,
    asymptote_2: Option<f64>,
    /// dℓ/dη changes sign between this row and the next.
    root_follows: bool,
}

fn exact_traces<'a>(model: &'a GpModel, solver: &'a Solver, seed: u64) -> Result<Box<dyn TraceProvider + 'a>> {
    Ok(match TraceMethod::auto(model.k(), seed) {
        TraceMethod::Eigen => Box::new(EigenTraces::new(model.k())?),
        TraceMethod::Cholesky => Box::new(CholeskyTraces::new(model.k(), solver.parallelism())),
        TraceMethod::Hutchinson { n_vectors, seed } => Box::new(HutchinsonTraces::new(model.k(), solver, n_vectors, seed)?),
    })
}

fn plotdata(a: PlotArgs, par: Parallelism) -> Result<()> {
    if a.points < 2 || !(a.eta_min > 0.0 && a.eta_max > a.eta_min) {
        return Err(Error::Input("need at least two points and 0 < eta_min < eta_max".into()));
    }
    let (_, model) = load_model(&a.model.data, a.model.basis, a.model.kernel, par)?;
    let solver = Solver::auto(&model, par);
    let traces = exact_traces(&model, &solver, 0)?;
    let spec = spectrum_bounds(model.k(), par)?;
    let asym = asymptote_coefficients(&model, large_n_default(model.n(), model.m()), par).ok();
    let (lo, hi) = (a.eta_min.log10(), a.eta_max.log10());
    let mut rows: Vec<PlotRow> = Vec::with_capacity(a.points);
    for i in 0..a.points {
        let eta = 10f64.powf(lo + (hi - lo) * i as f64 / (a.points - 1) as f64);
        let d = d_ell_deta(&model, eta, &solver, traces.as_ref())?;
        let b = derivative_bounds(&spec, model.n(), model.m(), eta).0;
        rows.push(PlotRow {
            eta,
            d_ell: d,
            bound_lo: -b,
            bound_hi: b,
            asymptote_1: asym.map(|c| c.d_ell(eta, 1)),
            asymptote_2: asym.map(|c| c.d_ell(eta, 2)),
            root_follows: false,
        });
    }
    for i in 0..rows.len() - 1 {
        rows[i].root_follows = rows[i].d_ell.signum() != rows[i + 1].d_ell.signum();
    }
    emit(a.out.as_deref(), &to_csv(&rows)?)
}

#[derive(Serialize)]
struct InterpRow {
    eta: f64,
    tau: f64,
    trace: f64,
}

fn trace_interp(a: TraceInterpArgs, par: Parallelism) -> Result<()> {
    if let Some(path) = &a.inspect {
        let interp: TraceInterpolant = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if a.points < 2 {
            return Err(Error::Input("need at least two points".into()));
        }
        let rows: Vec<InterpRow> = (0..a.points)
            .map(|i| {
                let eta = 10f64.powf(-3.0 + 6.0 * i as f64 / (a.points - 1) as f64);
                InterpRow { eta, tau: interp.eval_tau(eta), trace: interp.trace(eta) }
            })
            .collect();
        return emit(a.out.as_deref(), &to_csv(&rows)?);
    }
    let data = a.data.as_ref().ok_or_else(|| Error::Input("--data is required to fit an interpolant".into()))?;
    let ds = Dataset::read(data)?;
    let k = nugget::kernels::correlation_matrix(&ds.points, &a.kernel, par)?;
    let nodes = a.nodes.clone().unwrap_or_else(|| DEFAULT_NODES.to_vec());
    let method: TraceMethod = match a.trace_method.parse()? {
        TraceMethod::Hutchinson { n_vectors, .. } => TraceMethod::Hutchinson { n_vectors, seed: a.seed },
        m => m,
    };
    let interp = fit_tau_interpolant(&k, &nodes, method, par)?;
    if let Some(w) = &interp.warning {
        eprintln!("warning: {w}");
    }
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&interp)? + "\n"))
}
