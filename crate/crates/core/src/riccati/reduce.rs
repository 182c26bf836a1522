//! Special cases: constant-coefficient SDE, deterministic Volterra equation
//! and integro-differential equation with a convolution memory.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algebra::{mul_134, mul_23, RiccatiSolution, Side};
use crate::error::{Error, Result};
use crate::fields::{KernelField, NodeField};
use crate::linalg::{max_abs, pinv_sym, symmetrize};
use crate::problem::ProblemInstance;

const STRUCTURE_TOL: f64 = 1e-12;

fn constant_kernel(f: &KernelField) -> Option<DMatrix<f64>> {
    let n = f.n();
    let first = f.get(1, 0).into_owned();
    let scale = max_abs(&first).max(1.0);
    for i in 1..=n {
        for j in 0..i {
            if max_abs(&(f.get(i, j) - &first)) > STRUCTURE_TOL * scale {
                return None;
            }
        }
    }
    Some(first)
}

fn constant_weight(f: &NodeField) -> Option<DMatrix<f64>> {
    let first = f.get(0).into_owned();
    let scale = max_abs(&first).max(1.0);
    (0..=f.n()).all(|k| max_abs(&(f.get(k) - &first)) <= STRUCTURE_TOL * scale).then_some(first)
}

fn require<T>(x: Option<T>, what: &str) -> Result<T> {
    x.ok_or_else(|| Error::Precondition(format!("{what} must be constant")))
}

/// Classical matrix Riccati equation for constant coefficients, integrated
/// backward from `G` with the classic fourth-order Runge-Kutta step.
pub fn reduce_sde(problem: &ProblemInstance) -> Result<NodeField> {
    let a = require(constant_kernel(&problem.a), "kernel A")?;
    let b = require(constant_kernel(&problem.b), "kernel B")?;
    let c = require(constant_kernel(&problem.c), "kernel C")?;
    let d = require(constant_kernel(&problem.d_ker), "kernel D")?;
    let q = require(constant_weight(&problem.q), "weight Q")?;
    let r = require(constant_weight(&problem.r), "weight R")?;
    let n = problem.n();
    let h = problem.dt();
    // d/dt P = -rhs(P)
    let rhs = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let gain_l = p * &b + c.transpose() * p * &d;
        let inner = pinv_sym(&symmetrize(&(&r + d.transpose() * p * &d))).ok_or(Error::Pseudoinverse(0))?;
        let out = a.transpose() * p + p * &a + c.transpose() * p * &c + &q - &gain_l * inner * gain_l.transpose();
        Ok(symmetrize(&out))
    };
    let mut out = NodeField::zeros(n, problem.d, problem.d);
    let mut p = problem.g.clone();
    out.set(n, &p);
    for k in (0..n).rev() {
        // stepping backward in time: dP/d(-t) = rhs(P)
        let k1 = rhs(&p)?;
        let k2 = rhs(&(&p + &k1 * (h / 2.0)))?;
        let k3 = rhs(&(&p + &k2 * (h / 2.0)))?;
        let k4 = rhs(&(&p + &k3 * h))?;
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        p = symmetrize(&p);
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("Riccati ODE at node {k}")));
        }
        out.set(k, &p);
    }
    Ok(out)
}

/// Noise-free Volterra case: `P1 = Q` and the remaining components from the
/// recursion with only the control kernel present.
pub fn reduce_vie(problem: &ProblemInstance) -> Result<RiccatiSolution> {
    if !problem.a.is_zero() || !problem.c.is_zero() || !problem.d_ker.is_zero() {
        return Err(Error::Precondition("the Volterra reduction needs A = C = D = 0".into()));
    }
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let b = &problem.b;
    let mut sol = RiccatiSolution::zeros(n, d, l, dt);
    for k in 0..=n {
        let r = problem.r.get(k).into_owned();
        sol.p1.set(k, &problem.q.get(k).into_owned());
        sol.rhat_pinv.set(k, &pinv_sym(&r).ok_or(Error::Pseudoinverse(k))?);
        sol.rhat.set(k, &r);
    }
    sol.p2.set(n, &problem.g);
    for k in (0..n).rev() {
        // new rows at base k from the coefficients at bases > k
        let mut p2 = problem.g.clone();
        for s in k + 1..n {
            let b2 = sol.b2coef.get(s);
            p2 -= b2.transpose() * sol.rhat_pinv.get(s) * b2 * dt;
        }
        sol.p2.set(k, &symmetrize(&p2));
        for kp in k + 1..=n {
            let mut p3 = DMatrix::zeros(d, d);
            for th in k + 1..kp {
                p3 -= sol.b2coef.get(th).transpose() * sol.rhat_pinv.get(th) * sol.b1coef.get(kp, th) * dt;
            }
            sol.p3.set(kp, k, &p3);
            for s in kp..=n {
                let mut p4 = DMatrix::zeros(d, d);
                for th in k + 1..kp {
                    p4 -= sol.b1coef.get(s, th).transpose() * sol.rhat_pinv.get(th) * sol.b1coef.get(kp, th) * dt;
                }
                if s == kp {
                    p4 = symmetrize(&p4);
                }
                sol.p4.set(s, kp, k, &p4);
            }
        }
        // B^T ◁ P_{2,3} and B^T ◁ P_{1,3,4} at base k
        let mut b2 = b.get(n, k).transpose() * sol.p2.get(k);
        for i in k + 1..=n {
            b2 += b.get(i, k).transpose() * sol.p3.get(i, k).transpose() * dt;
        }
        sol.b2coef.set(k, &b2);
        for r in k + 1..=n {
            let mut b1 = b.get(r, k).transpose() * sol.p1.get(r) + b.get(n, k).transpose() * sol.p3.get(r, k);
            for q in k + 1..=n {
                b1 += b.get(q, k).transpose() * sol.p4.get(q, r, k) * dt;
            }
            sol.b1coef.set(r, k, &b1);
        }
    }
    if !sol.is_finite() {
        return Err(Error::NonFinite("Volterra reduction".into()));
    }
    Ok(sol)
}

/// Integro-differential reduction: value kernels `p0(t)`, `p1(t, s)` and the
/// finite-difference residuals of their differential identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideReduction {
    pub p0: NodeField,
    /// `p1(t_k, t_j)` for `j < k`.
    pub p1: KernelField,
    /// `p1(t_k, t_k)`.
    pub p1_diag: NodeField,
    pub residual_p0: f64,
    pub residual_p1: f64,
}

/// `memory[m]` samples the memory kernel at lag `m dt`, `m = 0..=N`.
pub fn reduce_vide(p: &RiccatiSolution, problem: &ProblemInstance, memory: &[DMatrix<f64>]) -> Result<VideReduction> {
    let n = problem.n();
    let (d, dt) = (problem.d, problem.dt());
    if memory.len() != n + 1 || memory.iter().any(|m| m.shape() != (d, d)) {
        return Err(Error::Dimension(format!("memory kernel needs {} samples of size {d}x{d}", n + 1)));
    }
    if !problem.c.is_zero() || !problem.d_ker.is_zero() {
        return Err(Error::Precondition("the integro-differential reduction needs C = D = 0".into()));
    }
    let b = require(constant_kernel(&problem.b), "kernel B")?;
    let q = require(constant_weight(&problem.q), "weight Q")?;
    let r = require(constant_weight(&problem.r), "weight R")?;
    if max_abs(&(r - DMatrix::identity(problem.l, problem.l))) > STRUCTURE_TOL {
        return Err(Error::Precondition("the integro-differential reduction needs R = I".into()));
    }
    // A(t_i, t_j) = dt sum_{m=1}^{i-j} memory[m]
    let mut cum = vec![DMatrix::zeros(d, d); n + 1];
    for m in 1..=n {
        cum[m] = &cum[m - 1] + &memory[m] * dt;
    }
    for i in 1..=n {
        for j in 0..i {
            let want = &cum[i - j];
            if max_abs(&(problem.a.get(i, j) - want)) > 1e-10 * max_abs(want).max(1.0) {
                return Err(Error::Precondition(format!(
                    "kernel A at ({i}, {j}) is not the integrated memory kernel"
                )));
            }
        }
    }

    let unit = KernelField::from_fn(n, d, d, |_, _| DMatrix::identity(d, d));
    let at = problem.a.transpose_blocks();
    let bbt = &b * b.transpose();

    let p0 = NodeField::from_fn(n, d, d, |k| crate::algebra::aggregate(p, k));
    let mut p1 = KernelField::zeros(n, d, d);
    let mut p1_diag = NodeField::zeros(n, d, d);
    let mut kterm = KernelField::zeros(n, d, d);
    let mut kdiag = NodeField::zeros(n, d, d);

    // f(θ) = head + dt sum_{r>θ} tail(r), folded against memory[θ - j]
    let fold = |head: &DMatrix<f64>, tails: &[DMatrix<f64>], k: usize, j: usize| -> DMatrix<f64> {
        let mut suffix = DMatrix::zeros(d, d);
        let mut acc = DMatrix::zeros(d, d);
        for th in (k + 1..=n).rev() {
            acc += (head + &suffix * dt) * &memory[th - j];
            suffix += &tails[th - k - 1];
        }
        acc * dt
    };
    for k in 0..n {
        let head_p = mul_23(&unit, p, Side::Left, k);
        let head_a = mul_23(&at, p, Side::Left, k);
        let tails_p: Vec<_> = (k + 1..=n).map(|r| mul_134(&unit, p, Side::Left, r, k)).collect();
        let tails_a: Vec<_> = (k + 1..=n).map(|r| mul_134(&at, p, Side::Left, r, k)).collect();
        for j in 0..=k {
            let v = fold(&head_p, &tails_p, k, j);
            let w = fold(&head_a, &tails_a, k, j);
            if j == k {
                p1_diag.set(k, &v);
                kdiag.set(k, &w);
            } else {
                p1.set(k, j, &v);
                kterm.set(k, j, &w);
            }
        }
    }

    let get = |f: &KernelField, diag: &NodeField, k: usize, j: usize| -> DMatrix<f64> {
        if j == k { diag.get(k).into_owned() } else { f.get(k, j).into_owned() }
    };
    let rhs0 = |k: usize| {
        let p0k = p0.get(k);
        let pd = p1_diag.get(k);
        p0k * &bbt * p0k - &q - pd - pd.transpose()
    };
    let mut residual_p0 = 0.0f64;
    for k in 0..n {
        let lhs = (p0.get(k + 1) - p0.get(k)) / dt;
        let avg = (rhs0(k) + rhs0(k + 1)) * 0.5;
        residual_p0 = residual_p0.max(max_abs(&(lhs - avg)));
    }
    let rhs1 = |k: usize, j: usize| {
        let p0k = p0.get(k);
        p0k * &bbt * get(&p1, &p1_diag, k, j) - p0k * &memory[k - j] - get(&kterm, &kdiag, k, j)
    };
    let mut residual_p1 = 0.0f64;
    for k in 0..n {
        for j in 0..=k {
            let lhs = (get(&p1, &p1_diag, k + 1, j) - get(&p1, &p1_diag, k, j)) / dt;
            let avg = (rhs1(k, j) + rhs1(k + 1, j)) * 0.5;
            residual_p1 = residual_p1.max(max_abs(&(lhs - avg)));
        }
    }
    Ok(VideReduction { p0, p1, p1_diag, residual_p0, residual_p1 })
}
