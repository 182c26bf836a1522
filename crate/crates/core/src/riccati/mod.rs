//! Backward solver for the four-component Riccati system, residual and
//! regularity diagnostics, and the special-case reductions.
//!
//! The direct scheme walks base nodes `k = N-1, ..., 0`. At each base it first
//! fills the new rows `P2(k)`, `P3(., k)` and `P4(., ., k)` from data at bases
//! `> k`, then the derived coefficients at `k`, then `P1(k)`, and finally caches
//! the boundary terms that seed the next base:
//!
//! ```text
//! bdry3(k)    = (P_{2,3} ▷ A)(k)      - B2(k)^T R^+(k) Dc(k)
//! bdry4(s, k) = (P_{1,3,4} ▷ A)(s, k) - B1(s, k)^T R^+(k) Dc(k)
//! ```
//!
//! Diagonal values (`bdry4(s, s)`, `bdry3(N)`, any coefficient at `(t, t)`) are
//! zero, so inner sums over the intermediate time stop one node short.

mod reduce;

pub use reduce::{reduce_sde, reduce_vide, reduce_vie, VideReduction};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algebra::{mul_134_ordered, mul_23_ordered, sandwich_ordered, RiccatiSolution, Side, SumOrder};
use crate::error::{Error, Result};
use crate::fields::{KernelField, NodeField};
use crate::linalg::{max_abs, min_eig_sym, pinv_sym, symmetrize};
use crate::oracle;
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Explicit backward recursion with right-endpoint quadrature.
    #[default]
    Direct,
    /// Read off the lifted dynamic program.
    Dp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub scheme: Scheme,
    /// `Reverse` accumulates the intermediate-time sums base by base
    /// (`O(N^3)`); `Forward` evaluates each sum afresh in ascending order.
    pub order: SumOrder,
    /// Largest step count accepted (pyramid storage grows like `N^3`).
    pub max_nodes: usize,
    /// Largest lifted dimension accepted by the dynamic program.
    pub dp_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { scheme: Scheme::Direct, order: SumOrder::Reverse, max_nodes: 256, dp_cap: 2000 }
    }
}

impl SolverOptions {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self { scheme, ..Self::default() }
    }
}

/// Transposed kernels reused by every base step.
pub(crate) struct Transposed {
    pub bt: KernelField,
    pub ct: KernelField,
    pub dt: KernelField,
}

impl Transposed {
    pub fn new(problem: &ProblemInstance) -> Self {
        Self {
            bt: problem.b.transpose_blocks(),
            ct: problem.c.transpose_blocks(),
            dt: problem.d_ker.transpose_blocks(),
        }
    }
}

/// Fills `rhat`, `rhat_pinv`, `dcoef`, `b2coef` and `b1coef(., k)` from the
/// components at base `k`.
pub(crate) fn derive_at(
    sol: &mut RiccatiSolution,
    problem: &ProblemInstance,
    tr: &Transposed,
    k: usize,
    order: SumOrder,
) -> Result<()> {
    let n = problem.n();
    let rhat = symmetrize(&(problem.r.get(k) + sandwich_ordered(&tr.dt, sol, &problem.d_ker, k, order)));
    let pinv = pinv_sym(&rhat).ok_or(Error::Pseudoinverse(k))?;
    if !pinv.iter().all(|x| x.is_finite()) {
        return Err(Error::Pseudoinverse(k));
    }
    let dcoef = sandwich_ordered(&tr.dt, sol, &problem.c, k, order);
    let b2 = mul_23_ordered(&tr.bt, sol, Side::Left, k, order);
    for r in k + 1..=n {
        let b1 = mul_134_ordered(&tr.bt, sol, Side::Left, r, k, order);
        sol.b1coef.set(r, k, &b1);
    }
    sol.rhat.set(k, &rhat);
    sol.rhat_pinv.set(k, &pinv);
    sol.dcoef.set(k, &dcoef);
    sol.b2coef.set(k, &b2);
    Ok(())
}

/// `Q + C^T ◁ P ▷ C - Dc^T R^+ Dc` at base `k`.
fn p1_rhs(sol: &RiccatiSolution, problem: &ProblemInstance, tr: &Transposed, k: usize, order: SumOrder) -> DMatrix<f64> {
    let dc = sol.dcoef.get(k);
    let corr = dc.transpose() * sol.rhat_pinv.get(k) * dc;
    symmetrize(&(problem.q.get(k) + sandwich_ordered(&tr.ct, sol, &problem.c, k, order) - corr))
}

fn bdry3_at(sol: &RiccatiSolution, problem: &ProblemInstance, k: usize, order: SumOrder) -> DMatrix<f64> {
    let b2 = sol.b2coef.get(k);
    mul_23_ordered(&problem.a, sol, Side::Right, k, order) - b2.transpose() * sol.rhat_pinv.get(k) * sol.dcoef.get(k)
}

fn bdry4_at(sol: &RiccatiSolution, problem: &ProblemInstance, s: usize, k: usize, order: SumOrder) -> DMatrix<f64> {
    let b1 = sol.b1coef.get(s, k);
    mul_134_ordered(&problem.a, sol, Side::Right, s, k, order) - b1.transpose() * sol.rhat_pinv.get(k) * sol.dcoef.get(k)
}

fn seed_terminal(sol: &mut RiccatiSolution, problem: &ProblemInstance) -> Result<()> {
    let n = problem.n();
    let r = problem.r.get(n).into_owned();
    sol.rhat.set(n, &r);
    sol.rhat_pinv.set(n, &pinv_sym(&r).ok_or(Error::Pseudoinverse(n))?);
    Ok(())
}

pub fn solve_riccati(problem: &ProblemInstance, opts: &SolverOptions) -> Result<RiccatiSolution> {
    let n = problem.n();
    if n > opts.max_nodes {
        return Err(Error::CapExceeded(format!(
            "N = {n} exceeds the pyramid storage cap of {} steps",
            opts.max_nodes
        )));
    }
    match opts.scheme {
        Scheme::Direct => solve_direct(problem, opts.order),
        Scheme::Dp => solve_from_dp(problem, opts),
    }
}

fn solve_direct(problem: &ProblemInstance, order: SumOrder) -> Result<RiccatiSolution> {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let tr = Transposed::new(problem);
    let mut sol = RiccatiSolution::zeros(n, d, l, dt);
    sol.p2.set(n, &problem.g);
    sol.p1.set(n, &problem.q.get(n).into_owned());
    seed_terminal(&mut sol, problem)?;

    let mut bdry3 = NodeField::zeros(n, d, d);
    let mut bdry4 = KernelField::zeros(n, d, d);
    // R^+(θ) B2(θ) and R^+(θ) B1(s, θ)
    let mut v2 = NodeField::zeros(n, l, d);
    let mut w1 = KernelField::zeros(n, l, d);
    let zero = DMatrix::<f64>::zeros(d, d);

    for k in (0..n).rev() {
        let next = k + 1;
        let p2 = match order {
            SumOrder::Reverse => sol.p2.get(next) - dt * sol.b2coef.get(next).transpose() * v2.get(next),
            SumOrder::Forward => {
                let mut acc = DMatrix::zeros(d, d);
                for s in next..=n {
                    acc.gemm_tr(1.0, &sol.b2coef.get(s), &v2.get(s), 1.0);
                }
                &problem.g - acc * dt
            }
        };
        sol.p2.set(k, &symmetrize(&p2));

        for kp in next..=n {
            let p3 = match order {
                SumOrder::Reverse if kp == next => bdry3.get(kp).into_owned(),
                SumOrder::Reverse => sol.p3.get(kp, next) - dt * sol.b2coef.get(next).transpose() * w1.get(kp, next),
                SumOrder::Forward => {
                    let mut acc = DMatrix::zeros(d, d);
                    for th in next..kp {
                        acc.gemm_tr(1.0, &sol.b2coef.get(th), &w1.get(kp, th), 1.0);
                    }
                    bdry3.get(kp) - acc * dt
                }
            };
            sol.p3.set(kp, k, &p3);
        }

        for kp in next..=n {
            for s in kp..=n {
                let base = || if s == kp { zero.clone() } else { bdry4.get(s, kp).into_owned() };
                let mut p4 = match order {
                    SumOrder::Reverse if kp == next => base(),
                    SumOrder::Reverse => {
                        sol.p4.get_stored(s, kp, next) - dt * sol.b1coef.get(s, next).transpose() * w1.get(kp, next)
                    }
                    SumOrder::Forward => {
                        let mut acc = DMatrix::zeros(d, d);
                        for th in next..kp {
                            acc.gemm_tr(1.0, &sol.b1coef.get(s, th), &w1.get(kp, th), 1.0);
                        }
                        base() - acc * dt
                    }
                };
                if s == kp {
                    p4 = symmetrize(&p4);
                }
                sol.p4.set(s, kp, k, &p4);
            }
        }

        derive_at(&mut sol, problem, &tr, k, order)?;
        let p1 = p1_rhs(&sol, problem, &tr, k, order);
        sol.p1.set(k, &p1);

        let pinv = sol.rhat_pinv.get(k).into_owned();
        v2.set(k, &(&pinv * sol.b2coef.get(k)));
        for r in next..=n {
            w1.set(r, k, &(&pinv * sol.b1coef.get(r, k)));
        }
        bdry3.set(k, &bdry3_at(&sol, problem, k, order));
        for s in next..=n {
            bdry4.set(s, k, &bdry4_at(&sol, problem, s, k, order));
        }
    }
    if !sol.is_finite() {
        return Err(Error::NonFinite("Riccati solution".into()));
    }
    Ok(sol)
}

fn solve_from_dp(problem: &ProblemInstance, opts: &SolverOptions) -> Result<RiccatiSolution> {
    let dp = oracle::solve_dp(problem, 0, opts.dp_cap)?;
    let mut sol = extract_from_dp(&dp, problem);
    derived_from_dp(&mut sol, &dp, problem)?;
    Ok(sol)
}

/// Derived coefficients read off the one-step curvature and cross term of the
/// dynamic program, so that the synthesized strategy reproduces its gains:
/// `R-hat = H / dt`, own block `dt Dc`, node blocks `dt^2 B1`, terminal `dt B2`.
pub fn derived_from_dp(sol: &mut RiccatiSolution, dp: &oracle::DpSolution, problem: &ProblemInstance) -> Result<()> {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    seed_terminal(sol, problem)?;
    sol.dcoef.set(n, &DMatrix::zeros(l, d));
    sol.b2coef.set(n, &DMatrix::zeros(l, d));
    for k in dp.k0..n {
        let h = dp.curvature(k);
        let s = dp.cross(k);
        let rhat = symmetrize(&(h / dt));
        let pinv = pinv_sym(&rhat).ok_or(Error::Pseudoinverse(k))?;
        let blk = |b: usize| s.view((0, b * d), (l, d)).into_owned();
        sol.rhat.set(k, &rhat);
        sol.rhat_pinv.set(k, &pinv);
        sol.dcoef.set(k, &(blk(0) / dt));
        for i in k + 1..=n {
            sol.b1coef.set(i, k, &(blk(i - k) / (dt * dt)));
        }
        sol.b2coef.set(k, &(blk(n - k + 1) / dt));
    }
    Ok(())
}

/// Reads `(P1, P2, P3, P4)` off the lifted value kernels.
pub fn extract_from_dp(dp: &oracle::DpSolution, problem: &ProblemInstance) -> RiccatiSolution {
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let mut sol = RiccatiSolution::zeros(n, d, l, dt);
    let blk = |pi: &DMatrix<f64>, a: usize, b: usize| pi.view((a * d, b * d), (d, d)).into_owned();
    for k in dp.k0..=n {
        let pi = dp.pi(k);
        let term = n - k + 1;
        sol.p2.set(k, &symmetrize(&blk(pi, term, term)));
        sol.p1.set(k, &symmetrize(&(blk(pi, 0, 0) / dt)));
    }
    for k in dp.k0..n {
        let pi = dp.pi(k);
        let term = n - k + 1;
        for i in k + 1..=n {
            sol.p3.set(i, k, &(blk(pi, term, i - k) / dt));
            for j in k + 1..=i {
                let raw = blk(pi, i - k, j - k);
                let p4 = if i == j { symmetrize(&((raw - sol.p1.get(i) * dt) / (dt * dt))) } else { raw / (dt * dt) };
                sol.p4.set(i, j, k, &p4);
            }
        }
    }
    sol
}

/// Recomputes every cached derived coefficient from `(P1..P4)`.
pub fn recompute_derived(sol: &mut RiccatiSolution, problem: &ProblemInstance, order: SumOrder) -> Result<()> {
    let n = problem.n();
    let tr = Transposed::new(problem);
    seed_terminal(sol, problem)?;
    sol.dcoef.set(n, &DMatrix::zeros(problem.l, problem.d));
    sol.b2coef.set(n, &DMatrix::zeros(problem.l, problem.d));
    for k in (0..n).rev() {
        derive_at(sol, problem, &tr, k, order)?;
    }
    Ok(())
}

/// Max-entry residual of each Riccati equation over the recursion nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.p1.max(self.p2).max(self.p3).max(self.p4)
    }
}

/// Back-substitutes `P` into the system. Derived coefficients are recomputed
/// from the components rather than read from the cache; the terminal seeds
/// are not part of the recursion and are not checked.
pub fn riccati_residual(p: &RiccatiSolution, problem: &ProblemInstance) -> Result<Residuals> {
    let n = problem.n();
    let (d, dt) = (problem.d, problem.dt());
    let order = SumOrder::Forward;
    let mut sol = p.clone();
    recompute_derived(&mut sol, problem, order)?;
    let tr = Transposed::new(problem);
    let mut res = Residuals::default();

    let mut bdry3 = NodeField::zeros(n, d, d);
    let mut bdry4 = KernelField::zeros(n, d, d);
    for k in 0..n {
        bdry3.set(k, &bdry3_at(&sol, problem, k, order));
        for s in k + 1..=n {
            bdry4.set(s, k, &bdry4_at(&sol, problem, s, k, order));
        }
    }
    let b2 = |th: usize| sol.b2coef.get(th).transpose();
    let w1 = |r: usize, th: usize| sol.rhat_pinv.get(th) * sol.b1coef.get(r, th);

    // Running intermediate-time sums, extended by one θ per base.
    let mut s2 = DMatrix::<f64>::zeros(d, d);
    let mut s3: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); n + 1];
    let mut s4: Vec<Vec<DMatrix<f64>>> = (0..=n).map(|s| vec![DMatrix::zeros(d, d); s + 1]).collect();
    for k in (0..n).rev() {
        let th = k + 1;
        let v2 = sol.rhat_pinv.get(th) * sol.b2coef.get(th);
        s2 += b2(th) * v2;
        let rhs2 = &problem.g - &s2 * dt;
        res.p2 = res.p2.max(max_abs(&(sol.p2.get(k) - rhs2)));

        let rhs1 = p1_rhs(&sol, problem, &tr, k, order);
        res.p1 = res.p1.max(max_abs(&(sol.p1.get(k) - rhs1)));

        for kp in th + 1..=n {
            let w = w1(kp, th);
            s3[kp] += b2(th) * &w;
            for s in kp..=n {
                s4[s][kp] += sol.b1coef.get(s, th).transpose() * &w;
            }
        }
        for kp in th..=n {
            let rhs3 = bdry3.get(kp) - &s3[kp] * dt;
            res.p3 = res.p3.max(max_abs(&(sol.p3.get(kp, k) - rhs3)));
            for s in kp..=n {
                let base = if s == kp { DMatrix::zeros(d, d) } else { bdry4.get(s, kp).into_owned() };
                let rhs4 = base - &s4[s][kp] * dt;
                res.p4 = res.p4.max(max_abs(&(sol.p4.get_stored(s, kp, k) - rhs4)));
            }
        }
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub rhat_min_eig: Vec<f64>,
    pub lambda_hat: f64,
    /// `|(I - R R^+)(Dc + B2)|_F` per node.
    pub range_residual_d: Vec<f64>,
    /// `|(I - R R^+) B1(r, t)|_F` on the triangle (1x1 blocks).
    pub range_residual_b1: KernelField,
    /// Sup norms of `R^+ Dc`, `R^+ B1`, `R^+ B2`.
    pub bounded_norms: [f64; 3],
    pub regular: bool,
    pub strongly_regular: bool,
    pub tolerance: f64,
}

/// Regularity diagnostics. Range residuals are compared with
/// `tol * max(1, |coefficient|)`; strong regularity asks `lambda_hat >= tol`.
pub fn regularity_report(p: &RiccatiSolution, problem: &ProblemInstance, tol: f64) -> RegularityReport {
    let n = problem.n();
    let l = problem.l;
    let mut rhat_min_eig = Vec::with_capacity(n + 1);
    let mut range_residual_d = Vec::with_capacity(n + 1);
    let mut range_residual_b1 = KernelField::zeros(n, 1, 1);
    let mut bounded = [0.0f64; 3];
    let mut regular = true;
    for k in 0..=n {
        let rhat = p.rhat.get(k).into_owned();
        let pinv = p.rhat_pinv.get(k).into_owned();
        let proj = DMatrix::identity(l, l) - &rhat * &pinv;
        let scale = max_abs(&rhat).max(1.0);
        let eig = min_eig_sym(&rhat);
        rhat_min_eig.push(eig);
        regular &= eig >= -tol * scale;
        let dc = p.dcoef.get(k) + p.b2coef.get(k);
        let rd = (&proj * &dc).norm();
        range_residual_d.push(rd);
        regular &= rd <= tol * dc.norm().max(1.0);
        bounded[0] = bounded[0].max(max_abs(&(&pinv * p.dcoef.get(k))));
        bounded[2] = bounded[2].max(max_abs(&(&pinv * p.b2coef.get(k))));
        for r in k + 1..=n {
            let b1 = p.b1coef.get(r, k);
            let rb = (&proj * b1).norm();
            range_residual_b1.set(r, k, &DMatrix::from_element(1, 1, rb));
            regular &= rb <= tol * b1.norm().max(1.0);
            bounded[1] = bounded[1].max(max_abs(&(&pinv * b1)));
        }
    }
    regular &= bounded.iter().all(|x| x.is_finite());
    let lambda_hat = rhat_min_eig.iter().copied().fold(f64::INFINITY, f64::min);
    RegularityReport {
        rhat_min_eig,
        lambda_hat,
        range_residual_d,
        range_residual_b1,
        bounded_norms: bounded,
        regular,
        strongly_regular: regular && lambda_hat >= tol,
        tolerance: tol,
    }
}
