//! Euler-Maruyama simulation on the forecast curve, Monte Carlo and exact
//! costs, and the Lyapunov-system cost representation.

mod exact;
mod lyapunov;

pub use exact::{exact_cost, exact_cost_capped, EXACT_COST_CAP};
pub use lyapunov::{lyapunov_cost, lyapunov_system, LyapunovSolution};

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{control_at, Strategy};
use crate::fields::NodeField;
use crate::grid::TimeGrid;
use crate::linalg::pairwise_sum;
use crate::problem::{InputCondition, ProblemInstance};
use crate::rng::NoiseStream;

/// How the control is produced at each node.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Causal feedback, optionally shifted by a deterministic control `offset`.
    Feedback { strategy: &'a Strategy, offset: Option<&'a NodeField> },
    /// Exogenous deterministic control (`l x 1` blocks).
    OpenLoop(&'a NodeField),
}

impl<'a> Policy<'a> {
    pub fn feedback(strategy: &'a Strategy) -> Self {
        Policy::Feedback { strategy, offset: None }
    }

    fn control(&self, state: &ForecastState) -> DVector<f64> {
        match self {
            Policy::Feedback { strategy, offset } => {
                let mut u = control_at(strategy, &state.history, &state.forecast[0], &state.forecast, &state.terminal, state.k0, state.k);
                if let Some(off) = offset {
                    u += off.get(state.k).column(0);
                }
                u
            }
            Policy::OpenLoop(u) => u.get(state.k).column(0).into_owned(),
        }
    }
}

/// Simulator state at node `k`: realized history `X(t_{k0})..X(t_{k-1})`, the
/// forecast curve on `t_k..T` (its first entry is `X(t_k)`) and the terminal
/// forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastState {
    pub k0: usize,
    pub k: usize,
    pub history: Vec<DVector<f64>>,
    pub forecast: Vec<DVector<f64>>,
    pub terminal: DVector<f64>,
}

impl ForecastState {
    pub fn initial(input: &InputCondition) -> Self {
        Self {
            k0: input.k0,
            k: input.k0,
            history: Vec::new(),
            forecast: input.phi1.clone(),
            terminal: input.phi2.clone(),
        }
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.forecast[0]
    }
}

/// One simulated path from its start node to `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    /// First node covered by this record.
    pub start: usize,
    /// `X(t_k)` for `k = start..=N`.
    pub x: Vec<DVector<f64>>,
    /// Terminal forecast at each node `start..=N`.
    pub sx2: Vec<DVector<f64>>,
    /// Control on `start..N`.
    pub u: Vec<DVector<f64>>,
    /// Brownian increments on `start..N`.
    pub dw: Vec<f64>,
    /// Simulator states saved at the requested nodes.
    pub checkpoints: Vec<ForecastState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub seed: u64,
    pub n_paths: usize,
    pub k0: usize,
    pub grid: TimeGrid,
    pub paths: Vec<PathRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Nodes at which the full simulator state is kept.
    pub checkpoints: Vec<usize>,
}

impl SimOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, checkpoints: Vec::new() }
    }
}

fn step(problem: &ProblemInstance, state: &mut ForecastState, u: &DVector<f64>, dw: f64) {
    let n = problem.n();
    let k = state.k;
    let dt = problem.dt();
    let x = state.forecast[0].clone();
    for i in k + 1..=n {
        let f = &mut state.forecast[i - k];
        let drift = problem.a.get(i, k) * &x + problem.b.get(i, k) * u;
        let diff = problem.c.get(i, k) * &x + problem.d_ker.get(i, k) * u;
        f.axpy(dt, &drift, 1.0);
        f.axpy(dw, &diff, 1.0);
    }
    let drift = problem.a.get(n, k) * &x + problem.b.get(n, k) * u;
    let diff = problem.c.get(n, k) * &x + problem.d_ker.get(n, k) * u;
    state.terminal.axpy(dt, &drift, 1.0);
    state.terminal.axpy(dw, &diff, 1.0);
    state.forecast.remove(0);
    state.history.push(x);
    state.k += 1;
}

/// Continues one path from `state` to `N`, drawing the increments of path
/// `path` under `seed`.
pub fn simulate_from(
    problem: &ProblemInstance,
    policy: Policy<'_>,
    state: &ForecastState,
    seed: u64,
    path: usize,
    checkpoints: &[usize],
) -> Result<PathRecord> {
    let n = problem.n();
    let dt = problem.dt();
    let mut st = state.clone();
    let mut noise = NoiseStream::new(seed, path as u64);
    let start = st.k;
    let mut rec = PathRecord {
        start,
        x: Vec::with_capacity(n + 1 - start),
        sx2: Vec::with_capacity(n + 1 - start),
        u: Vec::with_capacity(n - start),
        dw: Vec::with_capacity(n - start),
        checkpoints: Vec::new(),
    };
    while st.k < n {
        if checkpoints.contains(&st.k) {
            rec.checkpoints.push(st.clone());
        }
        let u = policy.control(&st);
        let dw = noise.increment(st.k, dt);
        rec.x.push(st.forecast[0].clone());
        rec.sx2.push(st.terminal.clone());
        rec.u.push(u.clone());
        rec.dw.push(dw);
        step(problem, &mut st, &u, dw);
        let blown = st.forecast.iter().chain(std::iter::once(&st.terminal)).any(|v| v.iter().any(|x| !x.is_finite()));
        if blown {
            return Err(Error::BlowUp { path, step: st.k });
        }
    }
    if checkpoints.contains(&n) {
        rec.checkpoints.push(st.clone());
    }
    rec.x.push(st.forecast[0].clone());
    rec.sx2.push(st.terminal.clone());
    Ok(rec)
}

fn run_ensemble(problem: &ProblemInstance, policy: Policy<'_>, input: &InputCondition, opts: &SimOptions) -> Result<PathEnsemble> {
    input.check(problem)?;
    if opts.n_paths == 0 {
        return Err(Error::InvalidParameter("path count must be at least 1".into()));
    }
    let init = ForecastState::initial(input);
    let paths = (0..opts.n_paths)
        .into_par_iter()
        .map(|p| simulate_from(problem, policy, &init, opts.seed, p, &opts.checkpoints))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { seed: opts.seed, n_paths: opts.n_paths, k0: input.k0, grid: problem.grid, paths })
}

pub fn simulate(problem: &ProblemInstance, strategy: &Strategy, input: &InputCondition, opts: &SimOptions) -> Result<PathEnsemble> {
    if !strategy.is_finite() {
        return Err(Error::NonFinite("strategy".into()));
    }
    run_ensemble(problem, Policy::feedback(strategy), input, opts)
}

pub fn simulate_open_loop(problem: &ProblemInstance, u: &NodeField, input: &InputCondition, opts: &SimOptions) -> Result<PathEnsemble> {
    if u.shape() != (problem.l, 1) || u.n() != problem.n() {
        return Err(Error::Dimension(format!("open-loop control must be {}x1 on every node", problem.l)));
    }
    run_ensemble(problem, Policy::OpenLoop(u), input, opts)
}

pub fn simulate_policy(problem: &ProblemInstance, policy: Policy<'_>, input: &InputCondition, opts: &SimOptions) -> Result<PathEnsemble> {
    run_ensemble(problem, policy, input, opts)
}

/// Realized cost of one path.
pub fn path_cost(path: &PathRecord, problem: &ProblemInstance) -> f64 {
    let n = problem.n();
    let dt = problem.dt();
    let s = path.start;
    let mut run = Vec::with_capacity(n - s);
    for k in s..n {
        let x = &path.x[k - s];
        let u = &path.u[k - s];
        run.push(x.dot(&(problem.q.get(k) * x)) + u.dot(&(problem.r.get(k) * u)));
    }
    let xt = &path.sx2[n - s];
    xt.dot(&(&problem.g * xt)) + dt * pairwise_sum(&run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCost {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mc_cost(ensemble: &PathEnsemble, problem: &ProblemInstance) -> McCost {
    let costs: Vec<f64> = ensemble.paths.iter().map(|p| path_cost(p, problem)).collect();
    let n = costs.len();
    if costs.iter().all(|&c| c == costs[0]) {
        return McCost { mean: costs[0], stderr: 0.0 };
    }
    let mean = pairwise_sum(&costs) / n as f64;
    let dev: Vec<f64> = costs.iter().map(|c| (c - mean) * (c - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    McCost { mean, stderr: (var / n as f64).sqrt() }
}

/// Writes one row per path per node: `path,k,x_*,u_*,sx2_*`. The control
/// columns are empty at the final node.
pub fn write_ensemble_csv<W: Write>(ensemble: &PathEnsemble, mut w: W) -> std::io::Result<()> {
    let Some(first) = ensemble.paths.first() else { return Ok(()) };
    let d = first.x[0].len();
    let l = first.u.first().map_or(0, |u| u.len());
    let mut header = vec!["path".to_string(), "k".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend((0..l).map(|i| format!("u_{i}")));
    header.extend((0..d).map(|i| format!("sx2_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (p, path) in ensemble.paths.iter().enumerate() {
        for (b, x) in path.x.iter().enumerate() {
            let mut row = vec![p.to_string(), (path.start + b).to_string()];
            row.extend(x.iter().map(|v| format!("{v:.16e}")));
            match path.u.get(b) {
                Some(u) => row.extend(u.iter().map(|v| format!("{v:.16e}"))),
                None => row.extend((0..l).map(|_| String::new())),
            }
            row.extend(path.sx2[b].iter().map(|v| format!("{v:.16e}")));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
