//! Exact discrete oracles: dynamic programming on the lifted forecast state and
//! a dense open-loop quadratic program for noise-free instances.
//!
//! The lifted state at node `k` is
//! `Z_k = (F_k(t_k), F_k(t_{k+1}), ..., F_k(t_N), sX2_k)`, one `d`-block per
//! node plus the terminal forecast. One step of the simulator maps it to
//! `Z_{k+1}` by dropping the own-node block and adding the kernel columns at
//! base `t_k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::RiccatiSolution;
use crate::error::{Error, Result};
use crate::feedback::Strategy;
use crate::linalg::{max_abs, min_eig_sym, pinv_sym, symmetrize};
use crate::problem::{InputCondition, ProblemInstance};

/// Kernel column `F(t_i, t_k)` for `i = k+1..=N` stacked with the terminal
/// row `F(T, t_k)`: the `(N-k+1)p x q` map from a base-`k` input to `Z_{k+1}`.
pub(crate) fn lifted_column(f: &crate::fields::KernelField, k: usize) -> DMatrix<f64> {
    let n = f.n();
    let (p, q) = f.shape();
    let mut out = DMatrix::zeros((n - k + 1) * p, q);
    for i in k + 1..=n {
        out.view_mut(((i - k - 1) * p, 0), (p, q)).copy_from(&f.get(i, k));
    }
    out.view_mut(((n - k) * p, 0), (p, q)).copy_from(&f.get(n, k));
    out
}

/// Lifted value kernels `Pi_k` and gains `K_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub k0: usize,
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pis: Vec<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
    curvatures: Vec<DMatrix<f64>>,
    cross: Vec<DMatrix<f64>>,
}

impl DpSolution {
    /// `Pi_k` of size `(N-k+2)d`.
    pub fn pi(&self, k: usize) -> &DMatrix<f64> {
        &self.pis[k - self.k0]
    }

    /// `K_k` of size `l x (N-k+2)d`, for `k < N`.
    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.gains[k - self.k0]
    }

    /// Control curvature `H_k` (`l x l`) of the one-step minimization, `k < N`.
    pub fn curvature(&self, k: usize) -> &DMatrix<f64> {
        &self.curvatures[k - self.k0]
    }

    /// Cross term `S_k` (`l x (N-k+2)d`) with `K_k = -H_k^+ S_k`, `k < N`.
    pub fn cross(&self, k: usize) -> &DMatrix<f64> {
        &self.cross[k - self.k0]
    }

    /// `Z^T Pi_{k0} Z` for the input's lifted initial state.
    pub fn value(&self, input: &InputCondition) -> Result<f64> {
        dp_value(self, input)
    }
}

pub fn solve_dp(problem: &ProblemInstance, k0: usize, cap: usize) -> Result<DpSolution> {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    if k0 >= n {
        return Err(Error::InvalidParameter(format!("start node {k0} must be below N = {n}")));
    }
    let m0 = (n - k0 + 2) * d;
    if m0 > cap {
        return Err(Error::CapExceeded(format!("lifted dimension {m0} exceeds the cap {cap}")));
    }
    let mut pis = vec![DMatrix::zeros(0, 0); n - k0 + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); n - k0];
    let mut curvatures = vec![DMatrix::zeros(0, 0); n - k0];
    let mut cross = vec![DMatrix::zeros(0, 0); n - k0];
    // Pi_N: own block zero, terminal block G.
    let mut pi_n = DMatrix::zeros(2 * d, 2 * d);
    pi_n.view_mut((d, d), (d, d)).copy_from(&problem.g);
    pis[n - k0] = pi_n;

    for k in (k0..n).rev() {
        let pi = &pis[k + 1 - k0];
        let mp = pi.nrows();
        let m = mp + d;
        let a = lifted_column(&problem.a, k) * dt;
        let b = lifted_column(&problem.b, k) * dt;
        let c = lifted_column(&problem.c, k);
        let e = lifted_column(&problem.d_ker, k);
        let pa = pi * &a;
        let pb = pi * &b;
        let pc = pi * &c;
        let pe = pi * &e;

        let h = symmetrize(&(problem.r.get(k) * dt + b.transpose() * &pb + e.transpose() * &pe * dt));
        let scale = max_abs(&h).max(dt);
        if min_eig_sym(&h) < -1e-10 * scale {
            return Err(Error::Indefinite(format!("control curvature at node {k} has a negative eigenvalue")));
        }
        let mut s = DMatrix::zeros(l, m);
        s.view_mut((0, 0), (l, d)).copy_from(&(b.transpose() * &pa + e.transpose() * &pc * dt));
        s.view_mut((0, d), (l, mp)).copy_from(&pb.transpose());

        let mut full = DMatrix::zeros(m, m);
        full.view_mut((0, 0), (d, d))
            .copy_from(&(a.transpose() * &pa + c.transpose() * &pc * dt + problem.q.get(k) * dt));
        full.view_mut((0, d), (d, mp)).copy_from(&pa.transpose());
        full.view_mut((d, 0), (mp, d)).copy_from(&pa);
        full.view_mut((d, d), (mp, mp)).copy_from(pi);

        let hp = pinv_sym(&h).ok_or(Error::Pseudoinverse(k))?;
        let gain = -(&hp * &s);
        let next = symmetrize(&(full + s.transpose() * &gain));
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("value kernel at node {k}")));
        }
        pis[k - k0] = next;
        gains[k - k0] = gain;
        curvatures[k - k0] = h;
        cross[k - k0] = s;
    }
    Ok(DpSolution { k0, n, d, l, pis, gains, curvatures, cross })
}

/// Lifted initial state `(phi1(t_{k0}), ..., phi1(T), phi2)`.
pub fn lifted_input(input: &InputCondition, d: usize) -> DVector<f64> {
    let m = (input.phi1.len() + 1) * d;
    let mut z = DVector::zeros(m);
    for (b, v) in input.phi1.iter().chain(std::iter::once(&input.phi2)).enumerate() {
        z.rows_mut(b * d, d).copy_from(v);
    }
    z
}

pub fn dp_value(dp: &DpSolution, input: &InputCondition) -> Result<f64> {
    if input.k0 < dp.k0 || input.k0 > dp.n || input.phi1.len() != dp.n + 1 - input.k0 || input.phi2.len() != dp.d {
        return Err(Error::Dimension("input does not match the dynamic-program grid".into()));
    }
    let z = lifted_input(input, dp.d);
    Ok(z.dot(&(dp.pi(input.k0) * &z)))
}

/// The strategy written as a gain on `Z_k`: own block `Θ1 + dt Θ2(t_k, t_k)`,
/// future blocks `dt Θ2(t_i, t_k)`, terminal block `Θ3`.
pub fn embed_strategy(strategy: &Strategy, k: usize, dt: f64) -> DMatrix<f64> {
    let n = strategy.theta1.n();
    let (l, d) = strategy.theta1.shape();
    let mut g = DMatrix::zeros(l, (n - k + 2) * d);
    g.view_mut((0, 0), (l, d)).copy_from(&(strategy.theta1.get(k) + strategy.theta2.get(k, k) * dt));
    for i in k + 1..=n {
        g.view_mut((0, (i - k) * d), (l, d)).copy_from(&(strategy.theta2.get(i, k) * dt));
    }
    g.view_mut((0, (n - k + 1) * d), (l, d)).copy_from(&strategy.theta3.get(k));
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainComparison {
    /// `max |K~_k - K_k|` per node `k0..N-1`.
    pub per_node: Vec<f64>,
    pub max_deviation: f64,
}

pub fn compare_gains(dp: &DpSolution, strategy: &Strategy, p: &RiccatiSolution) -> GainComparison {
    let per_node: Vec<f64> =
        (dp.k0..dp.n).map(|k| max_abs(&(embed_strategy(strategy, k, p.dt) - dp.gain(k)))).collect();
    let max_deviation = per_node.iter().copied().fold(0.0, f64::max);
    GainComparison { per_node, max_deviation }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    /// Optimal control on nodes `k0..N-1`.
    pub u_star: Vec<DVector<f64>>,
    pub value: f64,
}

/// Affine map `u -> X_k` and `u -> sX2(T)` for a noise-free instance:
/// returns `(offsets, sensitivities)` for nodes `k0..=N` followed by the
/// terminal forecast.
pub(crate) fn affine_state_map(problem: &ProblemInstance, input: &InputCondition) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let k0 = input.k0;
    let nu = (n - k0) * l;
    let mut x0: Vec<DVector<f64>> = Vec::with_capacity(n - k0 + 2);
    let mut sx: Vec<DMatrix<f64>> = Vec::with_capacity(n - k0 + 2);
    for i in k0..=n + 1 {
        let (mut off, row) = if i <= n { (input.phi1_at(i).clone(), i) } else { (input.phi2.clone(), n) };
        let mut sens = DMatrix::zeros(d, nu);
        for r in k0..i.min(n) {
            let a = problem.a.get(row, r);
            off += a * &x0[r - k0] * dt;
            sens += a * &sx[r - k0] * dt;
            let col = (r - k0) * l;
            let mut blk = sens.view_mut((0, col), (d, l));
            blk += problem.b.get(row, r) * dt;
        }
        x0.push(off);
        sx.push(sens);
    }
    (x0, sx)
}

pub fn qp_solve(problem: &ProblemInstance, input: &InputCondition) -> Result<QpSolution> {
    input.check(problem)?;
    if !problem.is_deterministic() {
        return Err(Error::Precondition("the quadratic-program oracle needs C = D = 0".into()));
    }
    let n = problem.n();
    let (l, dt) = (problem.l, problem.dt());
    let k0 = input.k0;
    let (x0, sx) = affine_state_map(problem, input);
    let g = &problem.g;
    let term = n - k0 + 1;
    let mut h = sx[term].transpose() * g * &sx[term];
    let mut lin = sx[term].transpose() * g * &x0[term];
    let mut c = x0[term].dot(&(g * &x0[term]));
    for k in k0..n {
        let q = problem.q.get(k);
        let (o, s) = (&x0[k - k0], &sx[k - k0]);
        h += s.transpose() * q * s * dt;
        lin += s.transpose() * q * o * dt;
        c += o.dot(&(q * o)) * dt;
        let col = (k - k0) * l;
        let mut blk = h.view_mut((col, col), (l, l));
        blk += problem.r.get(k) * dt;
    }
    let h = symmetrize(&h);
    let scale = max_abs(&h).max(1e-300);
    if min_eig_sym(&h) < -1e-10 * scale {
        return Err(Error::Indefinite("open-loop Hessian has a negative eigenvalue".into()));
    }
    let u = match h.clone().cholesky() {
        Some(ch) => -ch.solve(&lin),
        None => -(pinv_sym(&h).ok_or(Error::Pseudoinverse(k0))? * &lin),
    };
    let value = c + 2.0 * lin.dot(&u) + u.dot(&(&h * &u));
    let u_star = (0..n - k0).map(|b| u.rows(b * l, l).into_owned()).collect();
    Ok(QpSolution { u_star, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::hand_qp;

    #[test]
    fn hand_qp_by_dp_and_qp() {
        let (problem, input) = hand_qp();
        let dp = solve_dp(&problem, 0, 2000).unwrap();
        assert!((dp_value(&dp, &input).unwrap() - 0.5).abs() <= 1e-12);
        let qp = qp_solve(&problem, &input).unwrap();
        assert!((qp.value - 0.5).abs() <= 1e-12);
        for u in &qp.u_star {
            assert!((u[0] + 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn lifted_column_stacks_terminal_row() {
        let (problem, _) = hand_qp();
        let col = lifted_column(&problem.b, 0);
        assert_eq!(col.as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(lifted_column(&problem.b, 1).as_slice(), &[1.0, 1.0]);
    }
}
