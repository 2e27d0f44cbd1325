//! Command-line pipeline: configuration-driven runs, checkpoint resume,
//! post-hoc verification, walker ensembles, refinement studies, and the
//! fractional-calculus identity suite.
//!
//! Every artifact is a CSV written atomically (temp file + rename) into the
//! output directory, with floats printed to 17 significant digits so files
//! round-trip exactly.  Failures are reported as JSON lines on stderr and a
//! nonzero exit status; `run`/`resume` flush whatever trajectory exists
//! before aborting.  The only environment variable read is
//! `FENELAB_THREADS`, which caps the walker-ensemble thread pool — output
//! bytes do not depend on it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use statrs::function::gamma::gamma;

use crate::config::{self, RunConfig};
use crate::diagnostics::{diagnose, q_marginal, DiagnosticRecord};
use crate::fractional::{
    deconvolution_residual, fractional_convolve, rl_derivative, FractionalOrder, SampledPath,
    TimeGrid,
};
use crate::galerkin::{
    assemble, build_config_basis, build_scalar_basis, build_velocity_basis, ConfigBasis,
    ScalarBasis, Solver, SolverError, TorusRule, VelocityBasis,
};
use crate::langevin::{
    tv_between_binned, Ensemble, Histogram, InitialLaw, McError, StillFluid, WalkerSpring,
};
use crate::model::{ModelError, SpringModel};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Solver(#[from] SolverError),
    #[error("{0}")]
    Walkers(#[from] McError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Parser)]
#[command(
    name = "fenelab",
    version,
    about = "Coupled fluid / dumbbell-suspension laboratory with fractional memory"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the coupled system and write trajectory artifacts.
    Run(CommonArgs),
    /// Continue an interrupted run from its checkpoint, rewriting the same
    /// artifacts.
    Resume(CommonArgs),
    /// Re-audit a finished run: diagnostics CSV plus PASS/FAIL summary.
    Verify(CommonArgs),
    /// Simulate the walker ensemble in a still fluid and write its
    /// elongation histogram.
    Mc(McArgs),
    /// Step-size refinement study of the configured benchmark.
    Convergence(CommonArgs),
    /// Discrete fractional-calculus identity suite.
    VerifyKernels(CommonArgs),
    /// Dump the quadrature rules behind the configured model as CSVs.
    #[command(hide = true)]
    DumpQuadrature(CommonArgs),
    /// Total-variation distance between a solver marginal CSV and a walker
    /// histogram CSV on the same bins.
    #[command(hide = true)]
    CompareMc(CompareArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file; every key is defaulted when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct McArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of walker paths (overrides the config).
    #[arg(long)]
    paths: Option<usize>,
    /// Memory order (overrides the config).
    #[arg(long)]
    alpha: Option<f64>,
    /// Spring model, `fene` or `hookean` (overrides the config).
    #[arg(long)]
    spring: Option<String>,
    /// FENE extensibility (overrides the config).
    #[arg(long)]
    b: Option<f64>,
    /// Histogram file name inside the output directory.
    #[arg(long, default_value = "histogram.csv")]
    histogram: String,
}

#[derive(Args)]
struct CompareArgs {
    /// Solver marginal CSV (written by `run`).
    #[arg(long)]
    solver: PathBuf,
    /// Walker histogram CSV (written by `mc`).
    #[arg(long)]
    walkers: PathBuf,
}

/// Entry point for the binary: exit 0 when every enabled check passes,
/// 1 when checks fail, 2 on operational errors.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<usize, CliError> {
    match command {
        Command::Run(args) => cmd_run(&load_config(&args)?, false),
        Command::Resume(args) => cmd_run(&load_config(&args)?, true),
        Command::Verify(args) => cmd_verify(&load_config(&args)?),
        Command::Mc(args) => {
            let cfg = load_config(&args.common)?;
            cmd_mc(&cfg, &args)
        }
        Command::Convergence(args) => cmd_convergence(&load_config(&args)?),
        Command::VerifyKernels(args) => cmd_verify_kernels(&load_config(&args)?),
        Command::DumpQuadrature(args) => cmd_dump_quadrature(&load_config(&args)?),
        Command::CompareMc(args) => cmd_compare_mc(&args),
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => config::load(path)?,
        None => config::parse_config("")?,
    };
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    Ok(cfg)
}

/// 17-significant-digit float, the round-trip-exact CSV format.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a file atomically: temp sibling, then rename.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

fn report_failure(check: &str, value: f64, tolerance: f64) {
    eprintln!(
        "{}",
        serde_json::json!({ "check": check, "value": value, "tolerance": tolerance })
    );
}

struct Stage {
    velocity: VelocityBasis,
    scalar: ScalarBasis,
    qbasis: ConfigBasis,
}

fn build_stage(cfg: &RunConfig) -> Result<Stage, CliError> {
    let params = cfg.model_params()?;
    Ok(Stage {
        velocity: build_velocity_basis(params.dim, cfg.basis.x_cutoff)?,
        scalar: build_scalar_basis(params.dim, cfg.basis.x_cutoff)?,
        qbasis: build_config_basis(params.dim, params.spring, cfg.basis.q_modes)?,
    })
}

fn build_solver(cfg: &RunConfig, stage: &Stage, resume: bool) -> Result<Solver, CliError> {
    let params = cfg.model_params()?;
    let settings = cfg.solver_settings()?;
    let ops = assemble(&params, &stage.velocity, &stage.scalar, &stage.qbasis)?;
    if resume {
        let ckpt = cfg.output.dir.join("checkpoint.ckp");
        Ok(Solver::resume_from(&ckpt, params, ops, settings)?)
    } else {
        let (u0, psi0) = cfg.initial_state(&stage.velocity, &stage.scalar, &stage.qbasis)?;
        Ok(Solver::new(params, ops, settings, u0, psi0)?)
    }
}

// ---------------------------------------------------------------------------
// run / resume

fn cmd_run(cfg: &RunConfig, resume: bool) -> Result<usize, CliError> {
    let stage = build_stage(cfg)?;
    let mut solver = build_solver(cfg, &stage, resume)?;
    let ckpt = cfg.output.dir.join("checkpoint.ckp");

    let mut step_error: Option<SolverError> = None;
    let every = cfg.output.checkpoint_every;
    while solver.completed() < solver.settings.n_steps {
        if let Err(e) = solver.step() {
            step_error = Some(e);
            break;
        }
        if every > 0 && solver.completed() % every == 0 {
            solver.save_checkpoint(&ckpt)?;
        }
    }
    // Flush everything the run produced, even ahead of an abort.
    solver.save_checkpoint(&ckpt)?;
    write_run_artifacts(cfg, &solver, &stage)?;
    if let Some(e) = step_error {
        return Err(e.into());
    }
    println!(
        "completed {} steps to t = {}; artifacts in {}",
        solver.completed(),
        fmt(solver.time(solver.completed())),
        cfg.output.dir.display()
    );
    Ok(0)
}

fn write_run_artifacts(cfg: &RunConfig, solver: &Solver, stage: &Stage) -> Result<(), CliError> {
    let out = &cfg.output.dir;
    write_atomic(&out.join("trajectory.csv"), &trajectory_csv(solver))?;
    let records = diagnose(solver, &stage.qbasis);
    write_atomic(
        &out.join("diagnostics.csv"),
        &diagnostics_csv(&records, cfg.output.stride),
    )?;
    write_atomic(
        &out.join("marginal.csv"),
        &marginal_csv(cfg, solver, stage),
    )?;
    Ok(())
}

fn trajectory_csv(solver: &Solver) -> String {
    let ops = &solver.ops;
    let mut csv = String::from("step,t");
    for l in 0..ops.n_u {
        let _ = write!(csv, ",u{l}");
    }
    for a in 0..ops.n_x {
        for m in 0..ops.n_q {
            let _ = write!(csv, ",psi_{a}_{m}");
        }
    }
    csv.push('\n');
    for n in 0..=solver.completed() {
        let _ = write!(csv, "{n},{}", fmt(solver.time(n)));
        for v in solver.velocity(n).iter() {
            let _ = write!(csv, ",{}", fmt(*v));
        }
        let psi = solver.density(n);
        for a in 0..ops.n_x {
            for m in 0..ops.n_q {
                let _ = write!(csv, ",{}", fmt(psi[(a, m)]));
            }
        }
        csv.push('\n');
    }
    csv
}

const DIAG_HEADER: &str = "step,t,mass,u_energy,grad_u_dissipation,phi_l2,phi_grad_q,\
phi_grad_x,energy_lhs,energy_rhs_bound,adv_slack,corotational_residual,stress_norm,stress_bound";

fn diagnostics_csv(records: &[DiagnosticRecord], stride: usize) -> String {
    let mut csv = String::from(DIAG_HEADER);
    csv.push('\n');
    let last = records.len().saturating_sub(1);
    for (i, r) in records.iter().enumerate() {
        if i % stride != 0 && i != last {
            continue;
        }
        let _ = write!(csv, "{},{}", r.step, fmt(r.t));
        for v in [
            r.mass,
            r.u_energy,
            r.grad_u_dissipation,
            r.phi_l2,
            r.phi_grad_q,
            r.phi_grad_x,
            r.energy_lhs,
            r.energy_rhs_bound,
            r.adv_slack,
            r.corotational_residual,
            r.stress_norm,
            r.stress_bound,
        ] {
            let _ = write!(csv, ",{}", fmt(v));
        }
        csv.push('\n');
    }
    csv
}

/// Elongation marginal of the final density, integrated over the same bins
/// the walker histogram uses.
fn marginal_csv(cfg: &RunConfig, solver: &Solver, stage: &Stage) -> String {
    let dim = solver.params.dim;
    let radius = solver.params.spring.domain_radius();
    let hist = Histogram::new(dim, -radius, radius, cfg.mc.bins);
    let density = q_marginal(&stage.scalar, &stage.qbasis, solver.density(solver.completed()));
    let masses = hist.bin_masses(density);
    binned_csv(&hist, "mass", |bin| vec![fmt(masses[bin])])
}

fn binned_csv(hist: &Histogram, value_header: &str, values: impl Fn(usize) -> Vec<String>) -> String {
    let width = (hist.hi - hist.lo) / hist.bins_per_axis as f64;
    let mut csv = String::new();
    for c in 0..hist.dim {
        let _ = write!(csv, "i{c},");
    }
    for c in 0..hist.dim {
        let _ = write!(csv, "lo{c},hi{c},");
    }
    csv.push_str(value_header);
    csv.push('\n');
    for bin in 0..hist.counts.len() {
        let corner = hist.bin_corner(bin);
        let mut rem = bin;
        let mut idx = vec![0usize; hist.dim];
        for c in (0..hist.dim).rev() {
            idx[c] = rem % hist.bins_per_axis;
            rem /= hist.bins_per_axis;
        }
        for i in &idx {
            let _ = write!(csv, "{i},");
        }
        for lo in &corner {
            let _ = write!(csv, "{},{},", fmt(*lo), fmt(lo + width));
        }
        csv.push_str(&values(bin).join(","));
        csv.push('\n');
    }
    csv
}

// ---------------------------------------------------------------------------
// verify

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn run_checks(solver: &Solver, records: &[DiagnosticRecord]) -> Vec<Check> {
    let mass_drift = records
        .iter()
        .map(|r| (r.mass - records[0].mass).abs())
        .fold(0.0, f64::max);
    let ledger = records
        .iter()
        .map(|r| (r.energy_lhs - r.energy_rhs_bound) / r.energy_rhs_bound.abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let corot = records
        .iter()
        .map(|r| r.corotational_residual)
        .fold(0.0, f64::max);
    let stress = records
        .iter()
        .filter(|r| r.stress_bound > 0.0)
        .map(|r| r.stress_norm / r.stress_bound - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    vec![
        Check {
            name: "rotation-diagonal",
            value: solver.ops.rotation_identity_residual(),
            tolerance: 1e-12,
        },
        Check {
            name: "mass-conservation",
            value: mass_drift,
            tolerance: 1e-8,
        },
        Check {
            name: "energy-ledger",
            value: ledger,
            tolerance: 1e-12,
        },
        Check {
            name: "corotational-energy",
            value: corot,
            tolerance: 1e-10,
        },
        Check {
            name: "stress-bound",
            value: stress,
            tolerance: 1e-9,
        },
    ]
}

fn report_checks(checks: &[Check], summary_path: Option<&Path>) -> Result<usize, CliError> {
    let mut summary = String::new();
    let mut failures = 0;
    for c in checks {
        let line = format!(
            "{} {} value={} tolerance={}",
            if c.pass() { "PASS" } else { "FAIL" },
            c.name,
            fmt(c.value),
            fmt(c.tolerance)
        );
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
        if !c.pass() {
            failures += 1;
            report_failure(c.name, c.value, c.tolerance);
        }
    }
    if let Some(path) = summary_path {
        write_atomic(path, &summary)?;
    }
    Ok(failures)
}

fn cmd_verify(cfg: &RunConfig) -> Result<usize, CliError> {
    let stage = build_stage(cfg)?;
    let solver = build_solver(cfg, &stage, true)?;
    let records = diagnose(&solver, &stage.qbasis);
    write_atomic(
        &cfg.output.dir.join("diagnostics.csv"),
        &diagnostics_csv(&records, cfg.output.stride),
    )?;
    let checks = run_checks(&solver, &records);
    report_checks(&checks, Some(&cfg.output.dir.join("verify_summary.txt")))
}

// ---------------------------------------------------------------------------
// mc

fn cmd_mc(cfg: &RunConfig, args: &McArgs) -> Result<usize, CliError> {
    let mut settings = cfg.mc_settings()?;
    if let Some(alpha) = args.alpha {
        settings.alpha = alpha;
    }
    let spring = match args.spring.as_deref() {
        None => cfg.spring()?,
        Some("fene") => SpringModel::fene(args.b.unwrap_or(10.0))?,
        Some("hookean") => SpringModel::Hookean,
        Some(other) => {
            return Err(CliError::Invalid(format!(
                "unknown spring {other:?} (fene or hookean)"
            )))
        }
    };
    if args.b.is_some() && !matches!(spring, SpringModel::Fene { .. }) {
        return Err(CliError::Invalid(
            "--b is only meaningful with --spring fene".into(),
        ));
    }
    let paths = args.paths.unwrap_or(cfg.mc.paths);
    let dim = cfg.model.dim;
    let radius = spring.domain_radius();

    let simulate = || -> Result<Ensemble, McError> {
        let mut ensemble = Ensemble::new(
            dim,
            WalkerSpring::Spring(spring),
            settings,
            paths,
            cfg.seed(),
            InitialLaw::Equilibrium,
        )?;
        ensemble.advance_to(cfg.mc.t_final, &StillFluid(dim))?;
        Ok(ensemble)
    };
    let ensemble = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Invalid(e.to_string()))?
            .install(simulate)?,
        None => simulate()?,
    };

    let hist = ensemble.elongation_histogram(-radius, radius, cfg.mc.bins);
    let probs = hist.probabilities();
    let csv = binned_csv(&hist, "count,frequency", |bin| {
        vec![hist.counts[bin].to_string(), fmt(probs[bin])]
    });
    write_atomic(&cfg.output.dir.join(&args.histogram), &csv)?;
    println!(
        "simulated {} walkers to t = {}; mean square elongation {}",
        paths,
        fmt(cfg.mc.t_final),
        fmt(ensemble.mean_square_elongation())
    );
    Ok(0)
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("FENELAB_THREADS") {
        Ok(s) => s
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("FENELAB_THREADS={s} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// convergence

fn cmd_convergence(cfg: &RunConfig) -> Result<usize, CliError> {
    let levels = 4;
    let stage = build_stage(cfg)?;
    let mut finals = Vec::new();
    let mut grids = Vec::new();
    for level in 0..levels {
        let mut refined = cfg.clone();
        refined.grid.dt = cfg.grid.dt / f64::powi(2.0, level as i32);
        refined.grid.n_steps = cfg.grid.n_steps << level;
        let mut solver = build_solver(&refined, &stage, false)?;
        solver.run_to_end()?;
        grids.push((refined.grid.dt, refined.grid.n_steps));
        finals.push((
            solver.velocity(solver.completed()).clone(),
            solver.density(solver.completed()).clone(),
        ));
    }
    let (u_ref, psi_ref) = finals.last().unwrap();
    let mut errors = Vec::new();
    for level in 0..levels - 1 {
        let (u, psi) = &finals[level];
        let err = ((u - u_ref).norm_squared() + (psi - psi_ref).norm_squared()).sqrt();
        errors.push(err);
    }

    let mut csv = String::from("dt,n_steps,error,order\n");
    for (level, err) in errors.iter().enumerate() {
        let order = if level == 0 {
            String::new()
        } else {
            fmt((errors[level - 1] / err).log2())
        };
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt(grids[level].0),
            grids[level].1,
            fmt(*err),
            order
        );
    }
    write_atomic(&cfg.output.dir.join("convergence.csv"), &csv)?;

    let mut failures = 0;
    for level in 1..errors.len() {
        if !(errors[level] < errors[level - 1]) {
            failures += 1;
            report_failure("convergence-monotone", errors[level], errors[level - 1]);
        }
    }
    for (level, err) in errors.iter().enumerate() {
        println!(
            "dt = {} error = {}",
            fmt(grids[level].0),
            fmt(*err)
        );
    }
    println!(
        "{} refinement errors decrease monotonically",
        if failures == 0 { "PASS" } else { "FAIL" }
    );
    Ok(failures)
}

// ---------------------------------------------------------------------------
// verify-kernels

/// One identity check of the fractional-calculus suite.
#[derive(Debug, Clone)]
pub struct KernelCheck {
    pub identity: &'static str,
    pub alpha: f64,
    pub dt: f64,
    pub residual: f64,
    pub tolerance: f64,
}

/// Residuals of the discrete kernel identities at the suite's orders and
/// step sizes.  Tolerance is `5 dt^min(alpha, 1-alpha)`; the observed order
/// under refinement is checked by [`kernel_orders`].
pub fn kernel_suite() -> Vec<KernelCheck> {
    let mut rows = Vec::new();
    for &alpha in &[0.6, 0.75, 0.9] {
        let order = FractionalOrder::new(alpha).unwrap();
        for &dt in &[1e-2, 1e-3_f64] {
            let n = (1.0 / dt).round() as usize;
            let grid = TimeGrid::new(dt, n).unwrap();
            let tolerance = 5.0 * dt.powf(alpha.min(1.0 - alpha));

            // Semigroup: convolving the order-alpha kernel with order-
            // (1-alpha) kernel samples gives the order-1 kernel, the
            // constant 1.
            let samples = SampledPath::kernel_samples(grid, 1.0 - alpha, 1.0);
            let conv = fractional_convolve(alpha, &samples);
            let residual = window_max(grid, |k| (conv.value(k)[0] - 1.0).abs());
            rows.push(KernelCheck {
                identity: "semigroup",
                alpha,
                dt,
                residual,
                tolerance,
            });

            // Deconvolution: fractional integration followed by the
            // matching derivative returns a smooth path.
            let smooth = SampledPath::from_fn(grid, |t| (2.0 * t).sin());
            rows.push(KernelCheck {
                identity: "deconvolution",
                alpha,
                dt,
                residual: deconvolution_residual(order, &smooth, 0.0),
                tolerance,
            });

            // Monomial derivative: the order-alpha derivative of t is
            // t^(1-alpha) / Gamma(2-alpha).
            let linear = SampledPath::from_fn(grid, |t| t);
            let deriv = rl_derivative(order, &linear);
            let residual = window_max(grid, |k| {
                let t = grid.time(k);
                (deriv.value(k)[0] - t.powf(1.0 - alpha) / gamma(2.0 - alpha)).abs()
            });
            rows.push(KernelCheck {
                identity: "monomial-derivative",
                alpha,
                dt,
                residual,
                tolerance,
            });
        }
    }
    rows
}

/// Max over grid points clear of the time origin, where the kernels are
/// classically singular.
fn window_max(grid: TimeGrid, f: impl Fn(usize) -> f64) -> f64 {
    (0..grid.len())
        .filter(|&k| grid.time(k) >= 0.1)
        .map(f)
        .fold(0.0, f64::max)
}

/// Observed refinement order per (identity, alpha) from the suite's two
/// step sizes: `log10(residual_coarse / residual_fine)`.
pub fn kernel_orders(rows: &[KernelCheck]) -> Vec<(&'static str, f64, f64)> {
    let mut orders = Vec::new();
    for &alpha in &[0.6, 0.75, 0.9] {
        for identity in ["semigroup", "deconvolution", "monomial-derivative"] {
            let at = |dt: f64| {
                rows.iter()
                    .find(|r| r.identity == identity && r.alpha == alpha && r.dt == dt)
                    .map(|r| r.residual)
                    .unwrap_or(f64::NAN)
            };
            let coarse = at(1e-2);
            let fine = at(1e-3);
            let order = if fine < 1e-14 {
                f64::INFINITY
            } else {
                (coarse / fine).log10()
            };
            orders.push((identity, alpha, order));
        }
    }
    orders
}

fn cmd_verify_kernels(cfg: &RunConfig) -> Result<usize, CliError> {
    let rows = kernel_suite();
    let mut csv = String::from("identity_name,alpha,dt,residual\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.identity,
            fmt(r.alpha),
            fmt(r.dt),
            fmt(r.residual)
        );
    }
    write_atomic(&cfg.output.dir.join("kernels.csv"), &csv)?;

    let mut failures = 0;
    for r in &rows {
        let pass = r.residual <= r.tolerance;
        println!(
            "{} {} alpha={} dt={} residual={} tolerance={}",
            if pass { "PASS" } else { "FAIL" },
            r.identity,
            r.alpha,
            r.dt,
            fmt(r.residual),
            fmt(r.tolerance)
        );
        if !pass {
            failures += 1;
            report_failure(r.identity, r.residual, r.tolerance);
        }
    }
    for (identity, alpha, order) in kernel_orders(&rows) {
        let floor = 0.8 * alpha.min(1.0 - alpha);
        let pass = order >= floor;
        println!(
            "{} {identity} alpha={alpha} observed_order={order:.3} floor={floor:.3}",
            if pass { "PASS" } else { "FAIL" },
        );
        if !pass {
            failures += 1;
            report_failure(identity, order, floor);
        }
    }
    Ok(failures)
}

// ---------------------------------------------------------------------------
// dump-quadrature

fn cmd_dump_quadrature(cfg: &RunConfig) -> Result<usize, CliError> {
    let stage = build_stage(cfg)?;
    let space = &stage.qbasis.space;
    let out = &cfg.output.dir;
    let ball_csv = |rule: &crate::quadrature::BallRule| -> String {
        let dim = cfg.model.dim;
        let mut csv = (0..dim).map(|c| format!("q{c}")).collect::<Vec<_>>().join(",");
        csv.push_str(",weight\n");
        for i in 0..rule.len() {
            for v in rule.node(i) {
                let _ = write!(csv, "{},", fmt(*v));
            }
            let _ = writeln!(csv, "{}", fmt(rule.weights[i]));
        }
        csv
    };
    write_atomic(&out.join("maxwellian_rule.csv"), &ball_csv(&space.m_rule))?;
    write_atomic(&out.join("stress_rule.csv"), &ball_csv(&space.stress_rule))?;

    let torus = TorusRule::new(cfg.model.dim, 3 * cfg.basis.x_cutoff as usize + 2);
    let mut csv = (0..cfg.model.dim)
        .map(|c| format!("x{c}"))
        .collect::<Vec<_>>()
        .join(",");
    csv.push_str(",weight\n");
    for i in 0..torus.len() {
        for v in torus.node(i) {
            let _ = write!(csv, "{},", fmt(*v));
        }
        let _ = writeln!(csv, "{}", fmt(torus.weight));
    }
    write_atomic(&out.join("torus_rule.csv"), &csv)?;
    println!("wrote quadrature rules to {}", out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// compare-mc

struct BinnedFile {
    dim: usize,
    bins: usize,
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

fn read_binned_csv(path: &Path, value_col: &str) -> Result<BinnedFile, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Invalid(format!("{}: empty file", path.display())))?
        .split(',')
        .collect();
    let dim = header.iter().filter(|h| h.starts_with("lo")).count();
    if dim == 0 {
        return Err(CliError::Invalid(format!(
            "{}: no lo*/hi* columns",
            path.display()
        )));
    }
    let col = |name: &str| -> Result<usize, CliError> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Invalid(format!("{}: no column {name}", path.display())))
    };
    let value_idx = col(value_col)?;
    let idx_cols: Vec<usize> = (0..dim).map(|c| col(&format!("i{c}"))).collect::<Result<_, _>>()?;
    let lo0 = col("lo0")?;
    let hi0 = col("hi0")?;

    let mut rows = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_idx = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64, CliError> {
            fields
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Invalid(format!("{}: bad row {line:?}", path.display())))
        };
        let idx: Vec<usize> = idx_cols
            .iter()
            .map(|&i| parse(i).map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        max_idx = max_idx.max(*idx.iter().max().unwrap());
        lo = lo.min(parse(lo0)?);
        hi = hi.max(parse(hi0)?);
        rows.push((idx, parse(value_idx)?));
    }
    let bins = max_idx + 1;
    if rows.len() != bins.pow(dim as u32) {
        return Err(CliError::Invalid(format!(
            "{}: {} rows is not a full {bins}^{dim} grid",
            path.display(),
            rows.len()
        )));
    }
    let mut values = vec![0.0; rows.len()];
    for (idx, v) in rows {
        let flat = idx.iter().fold(0, |acc, &i| acc * bins + i);
        values[flat] = v;
    }
    Ok(BinnedFile {
        dim,
        bins,
        lo,
        hi,
        values,
    })
}

fn cmd_compare_mc(args: &CompareArgs) -> Result<usize, CliError> {
    let solver = read_binned_csv(&args.solver, "mass")?;
    let walkers = read_binned_csv(&args.walkers, "frequency")?;
    if solver.dim != walkers.dim
        || solver.bins != walkers.bins
        || (solver.lo - walkers.lo).abs() > 1e-12
        || (solver.hi - walkers.hi).abs() > 1e-12
    {
        return Err(CliError::Invalid(
            "histogram layouts differ between the two files".into(),
        ));
    }
    let tv = tv_between_binned(&walkers.values, &solver.values);
    println!("total-variation distance {}", fmt(tv));
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_suite_passes_its_tolerances() {
        let rows = kernel_suite();
        assert_eq!(rows.len(), 18);
        for r in &rows {
            assert!(
                r.residual <= r.tolerance,
                "{} at alpha {} dt {}: residual {} tolerance {}",
                r.identity,
                r.alpha,
                r.dt,
                r.residual,
                r.tolerance
            );
        }
        for (identity, alpha, order) in kernel_orders(&rows) {
            let floor = 0.8 * alpha.min(1.0 - alpha);
            assert!(
                order >= floor,
                "{identity} at alpha {alpha}: order {order} below {floor}"
            );
        }
    }

    #[test]
    fn float_format_round_trips_exactly() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -7.25e17] {
            let parsed: f64 = fmt(x).parse().unwrap();
            assert_eq!(parsed.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("file.csv");
        write_atomic(&path, "one\n").unwrap();
        write_atomic(&path, "two\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two\n");
        let names: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("file.csv")]);
    }

    #[test]
    fn run_artifacts_parse_back_and_strides_apply() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "[grid]\nn_steps = 6\n[basis]\nq_modes = 6\n[initial]\npreset = \"shear-mode\"\n\
             [output]\ndir = {:?}\nstride = 2\n",
            dir.path()
        );
        let cfg = config::parse_config(&text).unwrap();
        assert_eq!(cmd_run(&cfg, false).unwrap(), 0);

        let trajectory = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let lines: Vec<&str> = trajectory.lines().collect();
        assert_eq!(lines.len(), 8, "header + 7 states");
        assert!(lines[0].starts_with("step,t,u0"));
        for line in &lines[1..] {
            for field in line.split(',').skip(1) {
                field.parse::<f64>().unwrap();
            }
        }

        let diagnostics = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        let steps: Vec<usize> = diagnostics
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(steps, vec![0, 2, 4, 6], "stride 2 plus the final step");

        // A verify pass over the finished run succeeds.
        assert_eq!(cmd_verify(&cfg).unwrap(), 0);
        let summary =
            std::fs::read_to_string(dir.path().join("verify_summary.txt")).unwrap();
        assert_eq!(summary.lines().count(), 5);
        assert!(summary.lines().all(|l| l.starts_with("PASS")), "{summary}");
    }

    #[test]
    fn resume_rewrites_identical_artifacts() {
        let run_dir = tempfile::tempdir().unwrap();
        let full = format!(
            "[grid]\nn_steps = 8\n[basis]\nq_modes = 6\n[initial]\npreset = \"shear-mode\"\n\
             [output]\ndir = {:?}\n",
            run_dir.path()
        );
        let cfg_full = config::parse_config(&full).unwrap();
        cmd_run(&cfg_full, false).unwrap();
        let want = std::fs::read(run_dir.path().join("trajectory.csv")).unwrap();

        // Stop halfway, then resume to the end in the same directory.
        let half_dir = tempfile::tempdir().unwrap();
        let half = full.replace("n_steps = 8", "n_steps = 4").replace(
            &format!("{:?}", run_dir.path()),
            &format!("{:?}", half_dir.path()),
        );
        let cfg_half = config::parse_config(&half).unwrap();
        cmd_run(&cfg_half, false).unwrap();
        let cfg_rest = config::parse_config(
            &full.replace(&format!("{:?}", run_dir.path()), &format!("{:?}", half_dir.path())),
        )
        .unwrap();
        cmd_run(&cfg_rest, true).unwrap();
        let got = std::fs::read(half_dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(want, got, "resumed trajectory differs");
    }

    #[test]
    fn marginal_and_histogram_files_compare_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "[grid]\nn_steps = 2\n[basis]\nq_modes = 6\n[mc]\nbins = 8\npaths = 400\n\
             t_final = 0.2\nfine_step = 0.05\nem_step = 0.05\n[output]\ndir = {:?}\n",
            dir.path()
        );
        let cfg = config::parse_config(&text).unwrap();
        cmd_run(&cfg, false).unwrap();
        let mc_args = McArgs {
            common: CommonArgs {
                config: None,
                out: None,
                seed: None,
            },
            paths: None,
            alpha: None,
            spring: None,
            b: None,
            histogram: "histogram.csv".into(),
        };
        cmd_mc(&cfg, &mc_args).unwrap();
        let compare = CompareArgs {
            solver: dir.path().join("marginal.csv"),
            walkers: dir.path().join("histogram.csv"),
        };
        assert_eq!(cmd_compare_mc(&compare).unwrap(), 0);

        let solver = read_binned_csv(&dir.path().join("marginal.csv"), "mass").unwrap();
        assert_eq!(solver.dim, 2);
        assert_eq!(solver.bins, 8);
        let total: f64 = solver.values.iter().sum();
        assert!((total - 1.0).abs() < 0.02, "marginal mass {total}");
    }
}
