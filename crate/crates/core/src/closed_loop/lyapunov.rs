//! Deterministic Lyapunov representation of the closed-loop cost.
//!
//! The stacked process `Y_k = (X_k, u_k, sX2_k)` of size `e = 2d + l` solves a
//! discrete linear Volterra system
//! `Y_k = Phi_k + sum_{j<k} [Ab(t_k,t_j) dt + Cb(t_k,t_j) dW_j] Y_j`,
//! and the expected cost is a quadratic form in `Phi` whose weights come from a
//! backward recursion over the newest base.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::Strategy;
use crate::fields::{KernelField, NodeField, SquareField};
use crate::problem::{InputCondition, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSolution {
    pub l1: NodeField,
    /// `l2(a, b) = l2(b, a)^T`, diagonal included.
    pub l2: SquareField,
    pub drift: KernelField,
    pub diffusion: KernelField,
    pub weight: NodeField,
    /// Stacked free term on nodes `k0..=N` (zero before `k0`).
    pub phi: NodeField,
    pub k0: usize,
}

/// Control-row kernel `Θ1(t_k) f(t_k,t_j) + dt sum_{r>j} Θ2(t_r,t_k) f(t_r,t_j) + Θ3(t_k) f(T,t_j)`.
fn control_row(strategy: &Strategy, f: &KernelField, k: usize, j: usize, dt: f64) -> DMatrix<f64> {
    let n = f.n();
    let mut out = strategy.theta1.get(k) * f.get(k, j);
    for r in j + 1..=n {
        out.gemm(dt, &strategy.theta2.get(r, k), &f.get(r, j), 1.0);
    }
    out.gemm(1.0, &strategy.theta3.get(k), &f.get(n, j), 1.0);
    out
}

fn stacked(problem: &ProblemInstance, strategy: &Strategy, x: &KernelField, u: &KernelField) -> KernelField {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let e = 2 * d + l;
    KernelField::from_fn(n, e, e, |k, j| {
        let mut m = DMatrix::zeros(e, e);
        m.view_mut((0, 0), (d, d)).copy_from(&x.get(k, j));
        m.view_mut((0, d), (d, l)).copy_from(&u.get(k, j));
        m.view_mut((d, 0), (l, d)).copy_from(&control_row(strategy, x, k, j, dt));
        m.view_mut((d, d), (l, l)).copy_from(&control_row(strategy, u, k, j, dt));
        m.view_mut((d + l, 0), (d, d)).copy_from(&x.get(n, j));
        m.view_mut((d + l, d), (d, l)).copy_from(&u.get(n, j));
        m
    })
}

/// Running weight including the terminal cost expanded along the increments
/// of the terminal forecast; zero at `N`.
fn weights(problem: &ProblemInstance) -> NodeField {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let e = 2 * d + l;
    let g = &problem.g;
    NodeField::from_fn(n, e, e, |k| {
        let mut m = DMatrix::zeros(e, e);
        if k == n {
            return m;
        }
        let (a, b, c, dd) = (problem.a.get(n, k), problem.b.get(n, k), problem.c.get(n, k), problem.d_ker.get(n, k));
        let xx = problem.q.get(k) + c.transpose() * g * c + a.transpose() * g * a * dt;
        let xu = c.transpose() * g * dd + a.transpose() * g * b * dt;
        let uu = problem.r.get(k) + dd.transpose() * g * dd + b.transpose() * g * b * dt;
        m.view_mut((0, 0), (d, d)).copy_from(&xx);
        m.view_mut((0, d), (d, l)).copy_from(&xu);
        m.view_mut((d, 0), (l, d)).copy_from(&xu.transpose());
        m.view_mut((d, d), (l, l)).copy_from(&uu);
        let ga = g * a;
        let gb = g * b;
        m.view_mut((d + l, 0), (d, d)).copy_from(&ga);
        m.view_mut((d + l, d), (d, l)).copy_from(&gb);
        m.view_mut((0, d + l), (d, d)).copy_from(&ga.transpose());
        m.view_mut((d, d + l), (l, d)).copy_from(&gb.transpose());
        crate::linalg::symmetrize(&m)
    })
}

fn free_term(
    problem: &ProblemInstance,
    strategy: &Strategy,
    input: &InputCondition,
    offset: Option<&NodeField>,
) -> NodeField {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let e = 2 * d + l;
    let k0 = input.k0;
    let mut phi = NodeField::zeros(n, e, 1);
    for k in k0..=n {
        let x = input.phi1_at(k);
        let mut u = strategy.theta1.get(k) * x + strategy.theta3.get(k) * &input.phi2;
        for r in k0..=n {
            u.gemv(dt, &strategy.theta2.get(r, k), input.phi1_at(r), 1.0);
        }
        u += strategy.v.get(k).column(0);
        if let Some(off) = offset {
            u += off.get(k).column(0);
        }
        let mut col = DMatrix::zeros(e, 1);
        col.view_mut((0, 0), (d, 1)).copy_from(x);
        col.view_mut((d, 0), (l, 1)).copy_from(&u);
        col.view_mut((d + l, 0), (d, 1)).copy_from(&input.phi2);
        phi.set(k, &col);
    }
    phi
}

pub fn lyapunov_system(
    problem: &ProblemInstance,
    strategy: &Strategy,
    input: &InputCondition,
    offset: Option<&NodeField>,
) -> Result<LyapunovSolution> {
    input.check(problem)?;
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    if strategy.n() != n || strategy.theta1.shape() != (l, d) {
        return Err(Error::Dimension(format!("strategy must be {l}x{d} on {} nodes", n + 1)));
    }
    if let Some(off) = offset {
        if off.n() != n || off.shape() != (l, 1) {
            return Err(Error::Dimension(format!("offset must be {l}x1 on {} nodes", n + 1)));
        }
    }
    let e = 2 * d + l;
    let k0 = input.k0;
    let drift = stacked(problem, strategy, &problem.a, &problem.b);
    let diffusion = stacked(problem, strategy, &problem.c, &problem.d_ker);
    let weight = weights(problem);
    let phi = free_term(problem, strategy, input, offset);

    // `mine(k, r)` pairs a later node `k` with the newer base `r`; the public
    // field stores its transpose orientation.
    let mut l1 = NodeField::zeros(n, e, e);
    let mut mine = SquareField::zeros(n, e, e);
    l1.set(n, &weight.get(n).into_owned());
    for r in (k0..n).rev() {
        let mut ta = Vec::with_capacity(n - r);
        let mut tc = Vec::with_capacity(n - r);
        for k in r + 1..=n {
            let mut sa = DMatrix::zeros(e, e);
            let mut sc = DMatrix::zeros(e, e);
            for j in r + 1..=n {
                sa.gemm(1.0, &mine.get(k, j), &drift.get(j, r), 1.0);
                sc.gemm(1.0, &mine.get(k, j), &diffusion.get(j, r), 1.0);
            }
            ta.push(sa);
            tc.push(sc);
        }
        let mut diag = DMatrix::zeros(e, e);
        let mut lr = weight.get(r).into_owned();
        for k in r + 1..=n {
            let lk = l1.get(k);
            let m_kr = lk * drift.get(k, r) + &ta[k - r - 1] * dt;
            let c = diffusion.get(k, r);
            let inner = lk * c + &tc[k - r - 1] * dt;
            lr.gemm(dt, &c.transpose(), &inner, 1.0);
            diag.gemm(dt, &drift.get(k, r).transpose(), &m_kr, 1.0);
            mine.set(r, k, &m_kr.transpose());
            mine.set(k, r, &m_kr);
        }
        mine.set(r, r, &crate::linalg::symmetrize(&diag));
        l1.set(r, &crate::linalg::symmetrize(&lr));
    }
    let mut l2 = SquareField::zeros(n, e, e);
    for a in k0..=n {
        for b in k0..=n {
            l2.set(a, b, &mine.get(b, a).into_owned());
        }
    }
    Ok(LyapunovSolution { l1, l2, drift, diffusion, weight, phi, k0 })
}

impl LyapunovSolution {
    /// `phi2^T G phi2 + dt sum Phi^T L1 Phi + dt^2 sum sum Phi_a^T L2(b, a) Phi_b`.
    pub fn cost(&self, problem: &ProblemInstance, input: &InputCondition) -> f64 {
        let n = problem.n();
        let dt = problem.dt();
        let mut single = 0.0;
        let mut double = 0.0;
        for a in self.k0..=n {
            let pa = self.phi.get(a);
            single += (pa.transpose() * self.l1.get(a) * pa)[(0, 0)];
            for b in self.k0..=n {
                double += (pa.transpose() * self.l2.get(b, a) * self.phi.get(b))[(0, 0)];
            }
        }
        input.phi2.dot(&(&problem.g * &input.phi2)) + dt * single + dt * dt * double
    }
}

pub fn lyapunov_cost(
    problem: &ProblemInstance,
    strategy: &Strategy,
    input: &InputCondition,
    offset: Option<&NodeField>,
) -> Result<f64> {
    if !strategy.is_finite() {
        return Err(Error::NonFinite("strategy".into()));
    }
    Ok(lyapunov_system(problem, strategy, input, offset)?.cost(problem, input))
}
