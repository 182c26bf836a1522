//! Exact expected cost by second-moment propagation of the full-history
//! lifted vector `W_k = (X(t_{k0}), .., X(t_{k-1}), F_k(t_k), .., F_k(T), sX2_k, 1)`.
//!
//! Realized past blocks are frozen, the forecast blocks receive the kernel
//! columns at base `t_k`, and the trailing constant carries the affine part of
//! the control.

use nalgebra::DMatrix;

use super::Policy;
use crate::error::{Error, Result};
use crate::problem::{InputCondition, ProblemInstance};

/// Default cap on the lifted dimension.
pub const EXACT_COST_CAP: usize = 2000;

pub fn exact_cost(problem: &ProblemInstance, policy: Policy<'_>, input: &InputCondition) -> Result<f64> {
    exact_cost_capped(problem, policy, input, EXACT_COST_CAP)
}

pub fn exact_cost_capped(problem: &ProblemInstance, policy: Policy<'_>, input: &InputCondition, cap: usize) -> Result<f64> {
    input.check(problem)?;
    let n = problem.n();
    let (d, l, dt) = (problem.d, problem.l, problem.dt());
    let k0 = input.k0;
    let blocks = n - k0 + 2;
    let m = blocks * d + 1;
    if m > cap {
        return Err(Error::CapExceeded(format!("lifted dimension {m} exceeds the cap {cap}")));
    }
    let term = (n - k0 + 1) * d;
    let one = m - 1;

    let mut w = DMatrix::zeros(m, 1);
    for (b, v) in input.phi1.iter().chain(std::iter::once(&input.phi2)).enumerate() {
        w.view_mut((b * d, 0), (d, 1)).copy_from(v);
    }
    w[(one, 0)] = 1.0;
    let mut mom = &w * w.transpose();

    let mut run = 0.0;
    for k in k0..n {
        // V = [E_k; K~]: rows give (X_k, u_k) as linear maps of W.
        let mut v = DMatrix::zeros(d + l, m);
        let own = (k - k0) * d;
        for i in 0..d {
            v[(i, own + i)] = 1.0;
        }
        match policy {
            Policy::Feedback { strategy, offset } => {
                let mut gain = v.view_mut((d, 0), (l, m));
                for r in k0..=n {
                    let blk = strategy.theta2.get(r, k) * dt;
                    let mut dst = gain.view_mut((0, (r - k0) * d), (l, d));
                    dst += &blk;
                }
                let mut dst = gain.view_mut((0, own), (l, d));
                dst += strategy.theta1.get(k);
                gain.view_mut((0, term), (l, d)).copy_from(&strategy.theta3.get(k));
                let mut c = strategy.v.get(k).column(0).into_owned();
                if let Some(off) = offset {
                    c += off.get(k).column(0);
                }
                gain.view_mut((0, one), (l, 1)).copy_from(&c);
            }
            Policy::OpenLoop(u) => {
                v.view_mut((d, one), (l, 1)).copy_from(&u.get(k));
            }
        }
        let mv = &mom * v.transpose();
        let s = &v * &mv;
        let sxx = s.view((0, 0), (d, d));
        let suu = s.view((d, d), (l, l));
        run += (problem.q.get(k) * sxx).trace() + (problem.r.get(k) * suu).trace();

        // Drift and diffusion maps from (X_k, u_k) into W.
        let mut ud = DMatrix::zeros(m, d + l);
        let mut un = DMatrix::zeros(m, d + l);
        let mut place = |row: usize, i: usize| {
            ud.view_mut((row, 0), (d, d)).copy_from(&(problem.a.get(i, k) * dt));
            ud.view_mut((row, d), (d, l)).copy_from(&(problem.b.get(i, k) * dt));
            un.view_mut((row, 0), (d, d)).copy_from(&problem.c.get(i, k));
            un.view_mut((row, d), (d, l)).copy_from(&problem.d_ker.get(i, k));
        };
        for i in k + 1..=n {
            place((i - k0) * d, i);
        }
        place(term, n);
        let cross = &ud * mv.transpose();
        mom += &cross + cross.transpose();
        mom += &ud * &s * ud.transpose();
        mom += &un * &s * un.transpose() * dt;
        mom = (&mom + mom.transpose()) * 0.5;
    }
    let mt = mom.view((term, term), (d, d));
    let terminal = (&problem.g * mt).trace();
    let total = terminal + dt * run;
    if !total.is_finite() {
        return Err(Error::NonFinite("expected cost".into()));
    }
    Ok(total)
}
