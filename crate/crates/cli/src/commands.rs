//! The five commands. Each fills a [`RunReport`] and writes its artifacts
//! under the output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vlq_core::closed_loop::{
    exact_cost_capped, lyapunov_cost, mc_cost, simulate, write_ensemble_csv, Policy, SimOptions,
};
use vlq_core::feedback::{synthesize_strategy, value, Strategy};
use vlq_core::instances::random_direction;
use vlq_core::linalg::{asymmetry, max_abs};
use vlq_core::oracle::{compare_gains, dp_value, qp_solve, solve_dp, DpSolution};
use vlq_core::riccati::{
    reduce_sde, reduce_vide, reduce_vie, regularity_report, riccati_residual, solve_riccati, Scheme, SolverOptions,
};
use vlq_core::{aggregate, build_input, build_problem, validate_assumptions, Error, InputCondition, NodeField, ProblemInstance, RiccatiSolution};

use crate::config::RunConfig;
use crate::output::write_solution;
use crate::report::{Check, ConvergenceRow, Regularity, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    Verify,
    Simulate,
    Reduce,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Simulate => "simulate",
            Command::Reduce => "reduce",
            Command::Sweep => "sweep",
        }
    }
}

/// Relative band for the quadratic coefficient of the perturbation identity.
const QUADRATIC_BAND: f64 = 0.02;
/// Monte Carlo agreement in standard errors.
const MC_SIGMAS: f64 = 3.0;
/// Accepted halving factors and the minimum observed order.
const HALVING: (f64, f64) = (1.6, 2.5);
const MIN_ORDER: f64 = 0.9;

struct Setup {
    problem: ProblemInstance,
    input: InputCondition,
}

fn setup(config: &RunConfig) -> Result<Setup> {
    let problem = build_problem(&config.problem())?;
    let input = build_input(&config.input_spec(), &problem)?;
    Ok(Setup { problem, input })
}

fn timed<T>(report: &mut RunReport, name: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    report.timing_ms.insert(name.into(), t.elapsed().as_secs_f64() * 1e3);
    out
}

fn solver_options(config: &RunConfig, scheme: Scheme) -> SolverOptions {
    SolverOptions { scheme, dp_cap: config.run.cap, ..Default::default() }
}

/// Runs `command`, writes `report.json` and the artifacts under `out`.
pub fn run(command: Command, config: &RunConfig, out: &Path, threads: usize) -> Result<RunReport> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let s = setup(config)?;
    let mut report = RunReport::new(command.name(), config, &s.problem, threads);
    match command {
        Command::Solve => {
            solve_stage(&mut report, config, &s, out)?;
        }
        Command::Verify => verify(&mut report, config, &s, out)?,
        Command::Simulate => simulate_cmd(&mut report, config, &s, out)?,
        Command::Reduce => reduce(&mut report, config, &s)?,
        Command::Sweep => sweep(&mut report, config)?,
    }
    let path = out.join("report.json");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
    Ok(report)
}

/// Solve, back-substitute, check regularity, synthesize and evaluate.
fn solve_stage(
    report: &mut RunReport,
    config: &RunConfig,
    s: &Setup,
    out: &Path,
) -> Result<(RiccatiSolution, Option<Strategy>)> {
    let (p, tol) = (&s.problem, config.run.tolerance);
    let scheme = config.run.scheme;
    let sol = timed(report, "solve", || solve_riccati(p, &solver_options(config, scheme)))?;
    let res = riccati_residual(&sol, p)?;
    report.residuals = Some(res);
    let scale = sol.p4.max_abs().max(sol.p1.max_abs()).max(sol.p2.max_abs()).max(1.0);
    match scheme {
        Scheme::Direct => report.check(Check::bound("riccati_residual", res.max(), 0.0, res.max(), tol * scale)),
        // the dp-consistent solution satisfies the system only to first order
        Scheme::Dp => report.check(Check::info("riccati_residual", res.max(), 0.0)),
    }
    let mut asym = 0.0f64;
    for k in 0..=p.n() {
        asym = asym.max(asymmetry(&sol.p1.get(k).into_owned())).max(asymmetry(&sol.p2.get(k).into_owned()));
    }
    report.check(Check::bound("p1_p2_asymmetry", asym, 0.0, asym, tol * scale));

    let reg = regularity_report(&sol, p, tol);
    report.regularity = Some(Regularity {
        regular: reg.regular,
        strongly_regular: reg.strongly_regular,
        lambda_hat: reg.lambda_hat,
    });
    let assumptions = validate_assumptions(p);
    if assumptions.h4_satisfied {
        let gap = (assumptions.lambda - reg.lambda_hat).max(0.0);
        report.check(Check::bound("lambda_hat_at_least_lambda", reg.lambda_hat, assumptions.lambda, gap, tol));
    }
    let strategy = if reg.regular {
        Some(synthesize_strategy(&sol, p)?)
    } else {
        report.check(Check::bound("regular", reg.lambda_hat, 0.0, f64::INFINITY, 0.0));
        None
    };
    let v = value(&sol, &s.input);
    report.value("value", v);
    if assumptions.h4_satisfied {
        report.check(Check::bound("value_nonnegative", v, 0.0, (-v).max(0.0), tol * scale));
    }
    let files = write_solution(&out.join("solution"), &sol, strategy.as_ref(), &p.grid)?;
    report.artifacts.extend(files.into_iter().map(|mut a| {
        a.file = format!("solution/{}", a.file);
        a
    }));
    Ok((sol, strategy))
}

fn lifted_dim(p: &ProblemInstance, k0: usize) -> usize {
    (p.n() - k0 + 2) * p.d
}

fn verify(report: &mut RunReport, config: &RunConfig, s: &Setup, out: &Path) -> Result<()> {
    let (p, input) = (&s.problem, &s.input);
    let (tol, cap) = (config.run.tolerance, config.run.cap);
    let (sol, strategy) = solve_stage(report, config, s, out)?;
    let v = value(&sol, input);

    // dynamic program over the whole grid
    let mut dp: Option<DpSolution> = None;
    if lifted_dim(p, 0) <= cap {
        let d = timed(report, "dp", || solve_dp(p, 0, cap))?;
        let dv = dp_value(&d, input)?;
        report.value("dp_value", dv);
        report.check(Check::info("value_vs_dp_value", v, dv));
        if let Some(st) = &strategy {
            let cmp = compare_gains(&d, st, &sol);
            report.check(Check::info("gain_deviation", cmp.max_deviation, 0.0));
        }
        dp_consistency(report, config, s, &d)?;
        dp = Some(d);
    }

    if p.is_deterministic() {
        let qp = timed(report, "qp", || qp_solve(p, input))?;
        report.value("qp_value", qp.value);
        match &dp {
            Some(d) => {
                let dv = dp_value(d, input)?;
                report.check(Check::absolute("qp_vs_dp_value", qp.value, dv, tol * dv.abs().max(1.0)));
            }
            None => report.check(Check::info("qp_vs_value", qp.value, v)),
        }
    }

    if let Some(st) = &strategy {
        match exact_cost_capped(p, Policy::feedback(st), input, cap) {
            Ok(ex) => {
                report.value("exact_cost", ex);
                let ly = timed(report, "lyapunov", || lyapunov_cost(p, st, input, None))?;
                report.value("lyapunov_cost", ly);
                report.check(Check::relative("lyapunov_vs_exact_cost", ly, ex, tol));
                report.check(Check::info("exact_cost_vs_value", ex, v));
                if let Some(d) = &dp {
                    let dv = dp_value(d, input)?;
                    let shortfall = (dv - ex).max(0.0);
                    report.check(Check::bound("exact_cost_above_dp_value", ex, dv, shortfall, tol * dv.abs().max(1.0)));
                }
            }
            Err(Error::CapExceeded(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }

    structural_zeros(report, config, &sol, strategy.as_ref(), s)?;
    Ok(())
}

/// Checks that hold exactly for the dp-consistent solution: extraction
/// round trip and the perturbation identity of its strategy.
fn dp_consistency(report: &mut RunReport, config: &RunConfig, s: &Setup, dp: &DpSolution) -> Result<()> {
    let (p, input) = (&s.problem, &s.input);
    let (tol, cap) = (config.run.tolerance, config.run.cap);
    let sol = solve_riccati(p, &solver_options(config, Scheme::Dp))?;
    // own-node cross blocks are not part of the extraction
    let mut own_zero = input.clone();
    own_zero.phi1[0] = nalgebra::DVector::zeros(p.d);
    let dv0 = dp_value(dp, &own_zero)?;
    let ext = value(&sol, &own_zero);
    report.check(Check::absolute("dp_extraction_round_trip", ext, dv0, tol * dv0.abs().max(1.0)));

    let st = synthesize_strategy(&sol, p)?;
    let j0 = match exact_cost_capped(p, Policy::feedback(&st), input, cap) {
        Ok(j) => j,
        Err(Error::CapExceeded(_)) => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    report.check(Check::relative("dp_strategy_attains_dp_value", j0, dp_value(dp, input)?, tol));
    let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
    let (mut worst_lin, mut worst_quad) = (0.0f64, (0.0f64, 0.0, 0.0));
    let h = 0.1;
    for _ in 0..5 {
        let w = random_direction(p, &mut rng);
        let shifted = |c: f64| NodeField::from_fn(p.n(), p.l, 1, |k| w.get(k) * c);
        let (up, down) = (shifted(h), shifted(-h));
        let jp = exact_cost_capped(p, Policy::Feedback { strategy: &st, offset: Some(&up) }, input, cap)?;
        let jm = exact_cost_capped(p, Policy::Feedback { strategy: &st, offset: Some(&down) }, input, cap)?;
        let lin = ((jp - jm) / (2.0 * h)).abs();
        let quad = (jp + jm - 2.0 * j0) / (2.0 * h * h);
        let want: f64 =
            (0..p.n()).map(|k| (w.get(k).transpose() * sol.rhat.get(k) * w.get(k))[(0, 0)]).sum::<f64>() * p.dt();
        worst_lin = worst_lin.max(lin / j0.abs().max(quad).max(f64::MIN_POSITIVE));
        let rel = (quad - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        if rel >= worst_quad.0 {
            worst_quad = (rel, quad, want);
        }
    }
    report.check(Check::bound("perturbation_linear_coefficient", worst_lin, 0.0, worst_lin, tol));
    let (rel, quad, want) = worst_quad;
    report.check(Check::bound("perturbation_quadratic_coefficient", quad, want, rel, QUADRATIC_BAND));
    Ok(())
}

fn structural_zeros(
    report: &mut RunReport,
    config: &RunConfig,
    sol: &RiccatiSolution,
    strategy: Option<&Strategy>,
    s: &Setup,
) -> Result<()> {
    let (p, tol) = (&s.problem, config.run.tolerance);
    let g_zero = max_abs(&p.g) == 0.0;
    let q_zero = p.q.max_abs() == 0.0;
    if g_zero {
        let m = sol.p2.max_abs().max(sol.p3.max_abs());
        report.check(Check::bound("zero_terminal_cost_p2_p3", m, 0.0, m, tol));
    }
    if p.b.is_zero() {
        if let Some(st) = strategy {
            let m = st.theta2.max_abs().max(st.theta3.max_abs()).max(st.v.max_abs());
            report.check(Check::bound("zero_control_kernel_markovian", m, 0.0, m, tol));
        }
    }
    if g_zero && q_zero {
        let m = sol.p1.max_abs().max(sol.p2.max_abs()).max(sol.p3.max_abs()).max(sol.p4.max_abs());
        report.check(Check::bound("zero_cost_solution", m, 0.0, m, tol));
        let v = value(sol, &s.input);
        report.check(Check::bound("zero_cost_value", v, 0.0, v.abs(), tol));
    }
    Ok(())
}

fn simulate_cmd(report: &mut RunReport, config: &RunConfig, s: &Setup, out: &Path) -> Result<()> {
    let run = &config.run;
    if run.n_paths == 0 {
        bail!("simulate needs run.n_paths > 0");
    }
    let (_, strategy) = solve_stage(report, config, s, out)?;
    let Some(st) = strategy else { bail!("the Riccati solution is not regular; no strategy to simulate") };
    let (p, input) = (&s.problem, &s.input);
    let opts = SimOptions { n_paths: run.n_paths, seed: run.seed, checkpoints: run.checkpoints.clone() };
    let ens = timed(report, "simulate", || simulate(p, &st, input, &opts))?;
    let file = File::create(out.join("ensemble.csv")).context("creating ensemble.csv")?;
    write_ensemble_csv(&ens, BufWriter::new(file))?;
    let d = p.d;
    let l = p.l;
    let mut columns = vec!["path".to_string(), "k".to_string()];
    columns.extend((0..d).map(|i| format!("x_{i}")));
    columns.extend((0..l).map(|i| format!("u_{i}")));
    columns.extend((0..d).map(|i| format!("sx2_{i}")));
    report.artifacts.push(crate::report::Artifact { file: "ensemble.csv".into(), columns: columns.join(",") });

    let mc = mc_cost(&ens, p);
    report.value("mc_mean", mc.mean);
    report.value("mc_stderr", mc.stderr);
    report.value("mc_ci95_low", mc.mean - 1.96 * mc.stderr);
    report.value("mc_ci95_high", mc.mean + 1.96 * mc.stderr);
    match exact_cost_capped(p, Policy::feedback(&st), input, run.cap) {
        Ok(ex) => {
            report.value("exact_cost", ex);
            if mc.stderr > 0.0 {
                let z = (mc.mean - ex).abs() / mc.stderr;
                report.check(Check::bound("mc_vs_exact_cost_stderrs", mc.mean, ex, z, MC_SIGMAS));
            } else {
                report.check(Check::absolute("mc_vs_exact_cost", mc.mean, ex, run.tolerance * ex.abs().max(1.0)));
            }
        }
        Err(Error::CapExceeded(_)) => {}
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Memory kernel samples from a convolution drift `A(t, s) = k(t - s)` with
/// `k(0) = 0`: forward differences of the first column, extrapolated at lag 0.
fn memory_from_drift(p: &ProblemInstance) -> Vec<DMatrix<f64>> {
    let n = p.n();
    let dt = p.dt();
    let col = |m: usize| if m == 0 { DMatrix::zeros(p.d, p.d) } else { p.a.get(m, 0).into_owned() };
    let mut mem: Vec<DMatrix<f64>> = (0..=n).map(|m| if m == 0 { DMatrix::zeros(p.d, p.d) } else { (col(m) - col(m - 1)) / dt }).collect();
    mem[0] = if n >= 2 { &mem[1] * 2.0 - &mem[2] } else { mem[1].clone() };
    mem
}

fn reduce(report: &mut RunReport, config: &RunConfig, s: &Setup) -> Result<()> {
    let p = &s.problem;
    let tol = config.run.tolerance;
    let sol = timed(report, "solve", || solve_riccati(p, &solver_options(config, Scheme::Direct)))?;
    let mut applied = Vec::new();

    match reduce_sde(p) {
        Ok(ode) => {
            applied.push("sde");
            let agg0 = aggregate(&sol, 0);
            let ode0 = ode.get(0).into_owned();
            report.value("sde_ode_p0", ode0[(0, 0)]);
            report.value("sde_aggregate_p0", agg0[(0, 0)]);
            let dev = (0..=p.n()).map(|k| max_abs(&(aggregate(&sol, k) - ode.get(k)))).fold(0.0, f64::max);
            report.check(Check::info("sde_aggregate_vs_ode", agg0[(0, 0)], ode0[(0, 0)]));
            report.value("sde_aggregate_max_deviation", dev);
            if let Some(closed) = scalar_closed_form(p) {
                let target = closed(0.0);
                report.value("sde_closed_form_p0", target);
                report.check(Check::info("sde_aggregate_vs_closed_form", agg0[(0, 0)], target));
                report.check(Check::info("sde_ode_vs_closed_form", ode0[(0, 0)], target));
            }
        }
        Err(Error::Precondition(_)) => {}
        Err(e) => return Err(e.into()),
    }

    match reduce_vie(p) {
        Ok(vie) => {
            applied.push("vie");
            let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let gap = diff(vie.p2.as_slice(), sol.p2.as_slice())
                .max(diff(vie.p3.as_slice(), sol.p3.as_slice()))
                .max(diff(vie.p4.as_slice(), sol.p4.as_slice()))
                .max(diff(vie.p1.as_slice(), sol.p1.as_slice()));
            let scale = sol.p4.max_abs().max(sol.p2.max_abs()).max(1.0);
            report.check(Check::bound("vie_reduction_vs_general_solver", gap, 0.0, gap, tol * scale));
        }
        Err(Error::Precondition(_)) => {}
        Err(e) => return Err(e.into()),
    }

    let memory = memory_from_drift(p);
    // without memory the reduction is the classical one above
    let vide = if memory.iter().all(|m| max_abs(m) == 0.0) {
        Err(Error::Precondition("the drift kernel is zero".into()))
    } else {
        reduce_vide(&sol, p, &memory)
    };
    match vide {
        Ok(red) => {
            applied.push("vide");
            report.value("vide_p0_at_0", red.p0.get(0)[(0, 0)]);
            report.value("vide_residual_p0", red.residual_p0);
            report.value("vide_residual_p1", red.residual_p1);
            let fine_cfg = config.with_steps(2 * p.n());
            let fine = build_problem(&fine_cfg.problem())?;
            let fine_sol = solve_riccati(&fine, &solver_options(config, Scheme::Direct))?;
            let fine_red = reduce_vide(&fine_sol, &fine, &memory_from_drift(&fine))?;
            for (name, a, b) in [
                ("vide_residual_p0_halving", red.residual_p0, fine_red.residual_p0),
                ("vide_residual_p1_halving", red.residual_p1, fine_red.residual_p1),
            ] {
                let ratio = a / b;
                let miss = if ratio < HALVING.0 { HALVING.0 - ratio } else { (ratio - HALVING.1).max(0.0) };
                let mut c = Check::bound(name, ratio, 2.0, miss, 0.0);
                if a == 0.0 && b == 0.0 {
                    c = Check::info(name, 0.0, 0.0);
                }
                report.check(c);
            }
        }
        Err(Error::Precondition(_)) => {}
        Err(e) => return Err(e.into()),
    }

    if applied.is_empty() {
        bail!("no reduction applies: the instance has neither constant coefficients, nor A = C = D = 0, nor the integro-differential structure");
    }
    report.value("reductions_applied", applied.len() as f64);
    Ok(())
}

/// `P(t) = 1 / (1/g + b^2 (T - t) / r)` for the scalar problem
/// `dX = b u dt` with `Q = 0`.
fn scalar_closed_form(p: &ProblemInstance) -> Option<impl Fn(f64) -> f64> {
    if p.d != 1 || p.l != 1 || !p.a.is_zero() || !p.c.is_zero() || !p.d_ker.is_zero() || p.q.max_abs() != 0.0 {
        return None;
    }
    let (b, r, g) = (p.b.get(1, 0)[(0, 0)], p.r.get(0)[(0, 0)], p.g[(0, 0)]);
    let horizon = p.grid.horizon();
    (g > 0.0 && r > 0.0).then_some(move |t: f64| 1.0 / (1.0 / g + b * b * (horizon - t) / r))
}

/// Least-squares slope of `-log err` against `log N`.
fn fitted_order(ns: &[usize], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| -e.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn sweep(report: &mut RunReport, config: &RunConfig) -> Result<()> {
    let ladder = &config.run.sweep;
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[1] <= w[0]) {
        bail!("sweep needs at least two increasing step counts, got {ladder:?}");
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in ladder {
        let s = setup(&config.with_steps(n))?;
        let p = &s.problem;
        if lifted_dim(p, s.input.k0) > config.run.cap {
            bail!("N = {n}: lifted dimension {} exceeds the cap {}", lifted_dim(p, s.input.k0), config.run.cap);
        }
        let t = Instant::now();
        let sol = solve_riccati(p, &solver_options(config, Scheme::Direct))?;
        report.timing_ms.insert(format!("solve_n{n}"), t.elapsed().as_secs_f64() * 1e3);
        let v = value(&sol, &s.input);
        let dv = dp_value(&solve_dp(p, s.input.k0, config.run.cap)?, &s.input)?;
        let error = (v - dv).abs() / dv.abs().max(f64::MIN_POSITIVE);
        let order = rows.last().map(|prev| (prev.error / error).ln() / (n as f64 / prev.n as f64).ln());
        rows.push(ConvergenceRow { n, value: v, oracle: dv, error, order });
    }
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    if errs.iter().all(|&e| e > 0.0) {
        let order = fitted_order(&ns, &errs);
        report.value("fitted_order", order);
        report.check(Check::bound("observed_order", order, MIN_ORDER, (MIN_ORDER - order).max(0.0), 0.0));
    } else {
        report.check(Check::info("observed_order", 0.0, MIN_ORDER));
    }
    report.convergence = rows;
    Ok(())
}
