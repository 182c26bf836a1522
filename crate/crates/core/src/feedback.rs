//! Causal feedback strategy and value from a regular Riccati solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::RiccatiSolution;
use crate::error::{Error, Result};
use crate::fields::{NodeField, SquareField};
use crate::problem::{InputCondition, ProblemInstance};
use crate::riccati::regularity_report;

/// Relative tolerance for the range conditions checked before synthesis.
pub const RANGE_TOL: f64 = 1e-8;

/// `(Θ1, Θ2, Θ3, v)` on the grid; `theta2` is indexed `(t_r, t_k)` with the
/// second argument the decision time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub dt: f64,
    pub theta1: NodeField,
    pub theta2: SquareField,
    pub theta3: NodeField,
    pub v: NodeField,
}

impl Strategy {
    pub fn zeros(n: usize, l: usize, d: usize, dt: f64) -> Self {
        Self {
            dt,
            theta1: NodeField::zeros(n, l, d),
            theta2: SquareField::zeros(n, l, d),
            theta3: NodeField::zeros(n, l, d),
            v: NodeField::zeros(n, l, 1),
        }
    }

    pub fn n(&self) -> usize {
        self.theta1.n()
    }

    pub fn is_finite(&self) -> bool {
        self.theta1.is_finite() && self.theta2.is_finite() && self.theta3.is_finite() && self.v.is_finite()
    }
}

pub fn synthesize_strategy(p: &RiccatiSolution, problem: &ProblemInstance) -> Result<Strategy> {
    let rep = regularity_report(p, problem, RANGE_TOL);
    if !rep.regular {
        let worst_d = rep.range_residual_d.iter().copied().fold(0.0, f64::max);
        return Err(Error::Range(format!(
            "solution is not regular (min eig of R-hat {:.3e}, worst node range residual {:.3e})",
            rep.lambda_hat, worst_d
        )));
    }
    let n = problem.n();
    let (d, l) = (problem.d, problem.l);
    let mut s = Strategy::zeros(n, l, d, problem.dt());
    for k in 0..=n {
        let pinv = p.rhat_pinv.get(k);
        s.theta1.set(k, &-(pinv * p.dcoef.get(k)));
        s.theta3.set(k, &-(pinv * p.b2coef.get(k)));
        for r in k + 1..=n {
            s.theta2.set(r, k, &-(pinv * p.b1coef.get(r, k)));
        }
    }
    Ok(s)
}

/// Max-entry residuals of `R Θ1 + Dc`, `R Θ2 + B1 1{r>t}`, `R Θ3 + B2`, `R v`.
pub fn strategy_residuals(strategy: &Strategy, p: &RiccatiSolution) -> [f64; 4] {
    let n = strategy.n();
    let mut out = [0.0f64; 4];
    let m = |x: DMatrix<f64>| x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in 0..=n {
        let rh = p.rhat.get(k);
        out[0] = out[0].max(m(rh * strategy.theta1.get(k) + p.dcoef.get(k)));
        out[2] = out[2].max(m(rh * strategy.theta3.get(k) + p.b2coef.get(k)));
        out[3] = out[3].max(m(rh * strategy.v.get(k)));
        for r in 0..=n {
            let mut lhs = rh * strategy.theta2.get(r, k);
            if r > k {
                lhs += p.b1coef.get(r, k);
            }
            out[1] = out[1].max(m(lhs));
        }
    }
    out
}

/// `phi2^T P2 phi2 + dt sum_i [phi1^T P1 phi1 + 2 phi2^T P3 phi1 + dt sum_j phi1^T P4 phi1]`
/// at the input's start node.
pub fn value(p: &RiccatiSolution, input: &InputCondition) -> f64 {
    let n = p.n();
    let k0 = input.k0;
    let dt = p.dt;
    let phi2 = &input.phi2;
    let mut run = 0.0;
    for i in k0 + 1..=n {
        let xi = input.phi1_at(i);
        let mut inner = 0.0;
        for j in k0 + 1..=n {
            inner += xi.dot(&(p.p4.get(i, j, k0) * input.phi1_at(j)));
        }
        run += xi.dot(&(p.p1.get(i) * xi)) + 2.0 * phi2.dot(&(p.p3.get(i, k0) * xi)) + dt * inner;
    }
    phi2.dot(&(p.p2.get(k0) * phi2)) + dt * run
}

/// Control at node `k` from the realized history `X(t_{k0})..X(t_k)` (last
/// entry is `X(t_k)`), the forecast curve on `t_k..T` and the terminal forecast.
pub fn outcome_control(
    strategy: &Strategy,
    history: &[DVector<f64>],
    forecast: &[DVector<f64>],
    sx2: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    let n = strategy.n();
    if history.is_empty() || history.len() > k + 1 {
        return Err(Error::Dimension(format!("history must cover k0..={k}, got {} nodes", history.len())));
    }
    if forecast.len() != n - k + 1 {
        return Err(Error::Dimension(format!("forecast must cover {k}..={n}, got {} nodes", forecast.len())));
    }
    let k0 = k + 1 - history.len();
    let (own, past) = history.split_last().expect("non-empty");
    Ok(control_at(strategy, past, own, forecast, sx2, k0, k))
}

/// Unchecked splice evaluation shared with the simulator; `past` covers
/// `k0..k` and `own` is `X(t_k)`.
pub(crate) fn control_at(
    strategy: &Strategy,
    past: &[DVector<f64>],
    own: &DVector<f64>,
    forecast: &[DVector<f64>],
    sx2: &DVector<f64>,
    k0: usize,
    k: usize,
) -> DVector<f64> {
    let n = strategy.n();
    let dt = strategy.dt;
    let mut memory = DVector::zeros(strategy.theta1.shape().0);
    for r in k0..k {
        memory.gemv(1.0, &strategy.theta2.get(r, k), &past[r - k0], 1.0);
    }
    for r in k..=n {
        memory.gemv(1.0, &strategy.theta2.get(r, k), &forecast[r - k], 1.0);
    }
    let mut u = strategy.theta1.get(k) * own;
    u.axpy(dt, &memory, 1.0);
    u.gemv(1.0, &strategy.theta3.get(k), sx2, 1.0);
    u += strategy.v.get(k).column(0);
    u
}
