//! Multiplicative rules pairing two-time kernels with the four Riccati
//! components.
//!
//! Every integral over `(t_k, T]` is the right-endpoint sum
//! `dt * sum_{i=k+1..=N}`. Kernel values on the diagonal `s = t` are taken to
//! be zero, so at `k = N` the rules return zero blocks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fields::{KernelField, NodeField, PyramidField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `M ◁ P`: the kernel multiplies from the left.
    Left,
    /// `P ▷ N`: the kernel multiplies from the right.
    Right,
}

/// Accumulation order for the inner sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SumOrder {
    #[default]
    Forward,
    Reverse,
}

impl SumOrder {
    /// Visits `lo..=hi` in this order; empty when `lo > hi`.
    #[inline]
    pub fn each(self, lo: usize, hi: usize, mut f: impl FnMut(usize)) {
        if lo > hi {
            return;
        }
        match self {
            SumOrder::Forward => (lo..=hi).for_each(&mut f),
            SumOrder::Reverse => (lo..=hi).rev().for_each(&mut f),
        }
    }
}

/// The four Riccati components with cached derived coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub d: usize,
    pub l: usize,
    pub dt: f64,
    pub p1: NodeField,
    pub p2: NodeField,
    /// `P3(s, t)` with `s > t`.
    pub p3: KernelField,
    pub p4: PyramidField,
    /// `R + D^T ◁ P ▷ D`
    pub rhat: NodeField,
    pub rhat_pinv: NodeField,
    /// `D^T ◁ P ▷ C`, `l x d`
    pub dcoef: NodeField,
    /// `B^T ◁ P_{2,3}`, `l x d`
    pub b2coef: NodeField,
    /// `B^T ◁ P_{1,3,4}` at `(r, t)`, `l x d`
    pub b1coef: KernelField,
}

impl RiccatiSolution {
    pub fn zeros(n: usize, d: usize, l: usize, dt: f64) -> Self {
        Self {
            d,
            l,
            dt,
            p1: NodeField::zeros(n, d, d),
            p2: NodeField::zeros(n, d, d),
            p3: KernelField::zeros(n, d, d),
            p4: PyramidField::zeros(n, d),
            rhat: NodeField::zeros(n, l, l),
            rhat_pinv: NodeField::zeros(n, l, l),
            dcoef: NodeField::zeros(n, l, d),
            b2coef: NodeField::zeros(n, l, d),
            b1coef: KernelField::zeros(n, l, d),
        }
    }

    pub fn n(&self) -> usize {
        self.p1.n()
    }

    pub fn is_finite(&self) -> bool {
        self.p1.is_finite() && self.p2.is_finite() && self.p3.is_finite() && self.p4.is_finite()
    }
}

/// `M ◁ P_{2,3}` (left) or `P_{2,3} ▷ M` (right) at base node `k`.
pub fn mul_23(m: &KernelField, p: &RiccatiSolution, side: Side, k: usize) -> DMatrix<f64> {
    mul_23_ordered(m, p, side, k, SumOrder::Forward)
}

pub fn mul_23_ordered(m: &KernelField, p: &RiccatiSolution, side: Side, k: usize, order: SumOrder) -> DMatrix<f64> {
    let n = p.n();
    let (mr, mc) = m.shape();
    let out_shape = match side {
        Side::Left => (mr, p.d),
        Side::Right => (p.d, mc),
    };
    if k >= n {
        return DMatrix::zeros(out_shape.0, out_shape.1);
    }
    let mut acc = DMatrix::zeros(out_shape.0, out_shape.1);
    order.each(k + 1, n, |i| match side {
        Side::Left => acc.gemm(1.0, &m.get(i, k), &p.p3.get(i, k).transpose(), 1.0),
        Side::Right => acc.gemm(1.0, &p.p3.get(i, k), &m.get(i, k), 1.0),
    });
    acc *= p.dt;
    match side {
        Side::Left => acc.gemm(1.0, &m.get(n, k), &p.p2.get(k), 1.0),
        Side::Right => acc.gemm(1.0, &p.p2.get(k), &m.get(n, k), 1.0),
    }
    acc
}

/// `M ◁ P_{1,3,4}` (left) or `P_{1,3,4} ▷ M` (right) at `(t_i, t_k)`, `i > k`.
pub fn mul_134(m: &KernelField, p: &RiccatiSolution, side: Side, i: usize, k: usize) -> DMatrix<f64> {
    mul_134_ordered(m, p, side, i, k, SumOrder::Forward)
}

pub fn mul_134_ordered(
    m: &KernelField,
    p: &RiccatiSolution,
    side: Side,
    i: usize,
    k: usize,
    order: SumOrder,
) -> DMatrix<f64> {
    let n = p.n();
    assert!(k < i && i <= n, "mul_134 needs k < i <= N, got i = {i}, k = {k}");
    let (mr, mc) = m.shape();
    match side {
        Side::Left => {
            let mut acc = DMatrix::zeros(mr, p.d);
            order.each(k + 1, n, |r| {
                let p4 = p.p4.get(r, i, k);
                acc.gemm(1.0, &m.get(r, k), &p4, 1.0);
            });
            acc *= p.dt;
            acc.gemm(1.0, &m.get(i, k), &p.p1.get(i), 1.0);
            acc.gemm(1.0, &m.get(n, k), &p.p3.get(i, k), 1.0);
            acc
        }
        Side::Right => {
            let mut acc = DMatrix::zeros(p.d, mc);
            order.each(k + 1, n, |r| {
                let p4 = p.p4.get(i, r, k);
                acc.gemm(1.0, &p4, &m.get(r, k), 1.0);
            });
            acc *= p.dt;
            acc.gemm(1.0, &p.p1.get(i), &m.get(i, k), 1.0);
            acc.gemm_tr(1.0, &p.p3.get(i, k), &m.get(n, k), 1.0);
            acc
        }
    }
}

/// `M ◁ P ▷ N` at base node `k`.
pub fn sandwich(m: &KernelField, p: &RiccatiSolution, nf: &KernelField, k: usize) -> DMatrix<f64> {
    sandwich_ordered(m, p, nf, k, SumOrder::Forward)
}

pub fn sandwich_ordered(m: &KernelField, p: &RiccatiSolution, nf: &KernelField, k: usize, order: SumOrder) -> DMatrix<f64> {
    let n = p.n();
    let d = p.d;
    let rows = m.shape().0;
    let cols = nf.shape().1;
    let mut out = DMatrix::zeros(rows, cols);
    if k >= n {
        return out;
    }
    let mt = m.get(n, k);
    let nt = nf.get(n, k);
    order.each(k + 1, n, |i| {
        let mi = m.get(i, k);
        let ni = nf.get(i, k);
        // dt * sum_j P4(i, j, k) N(j, k)
        let mut inner = DMatrix::zeros(d, cols);
        order.each(k + 1, n, |j| {
            let p4 = p.p4.get(i, j, k);
            inner.gemm(1.0, &p4, &nf.get(j, k), 1.0);
        });
        inner *= p.dt;
        inner.gemm(1.0, &p.p1.get(i), &ni, 1.0);
        inner.gemm_tr(1.0, &p.p3.get(i, k), &nt, 1.0);
        let mut term = mi * inner;
        term.gemm(1.0, &(mt * p.p3.get(i, k)), &ni, 1.0);
        out += term;
    });
    out *= p.dt;
    out += mt * p.p2.get(k) * nt;
    out
}

/// `P2 + dt sum_{i>k} [P1 + P3 + P3^T + dt sum_{j>k} P4]` at base node `k`.
pub fn aggregate(p: &RiccatiSolution, k: usize) -> DMatrix<f64> {
    aggregate_ordered(p, k, SumOrder::Forward)
}

pub fn aggregate_ordered(p: &RiccatiSolution, k: usize, order: SumOrder) -> DMatrix<f64> {
    let n = p.n();
    let d = p.d;
    let mut out = DMatrix::zeros(d, d);
    order.each(k + 1, n, |i| {
        let mut inner = DMatrix::zeros(d, d);
        order.each(k + 1, n, |j| inner += p.p4.get(i, j, k));
        inner *= p.dt;
        inner += p.p1.get(i);
        inner += p.p3.get(i, k);
        inner += p.p3.get(i, k).transpose();
        out += inner;
    });
    out *= p.dt;
    out += p.p2.get(k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn const_field(n: usize, rows: usize, cols: usize, x: f64) -> KernelField {
        KernelField::from_fn(n, rows, cols, |_, _| DMatrix::from_element(rows, cols, x))
    }

    /// Random solution with symmetric P1, P2.
    fn random_solution(rng: &mut ChaCha8Rng, n: usize, d: usize) -> RiccatiSolution {
        let mut p = RiccatiSolution::zeros(n, d, 1, 1.0 / n as f64);
        let mut rnd = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        for k in 0..=n {
            let a = rnd(d, d);
            p.p1.set(k, &(&a + a.transpose()));
            let b = rnd(d, d);
            p.p2.set(k, &(&b + b.transpose()));
        }
        for i in 1..=n {
            for j in 0..i {
                p.p3.set(i, j, &rnd(d, d));
            }
        }
        for k in 0..n {
            for i in k + 1..=n {
                for j in k + 1..i {
                    p.p4.set(i, j, k, &rnd(d, d));
                }
                let a = rnd(d, d);
                p.p4.set(i, i, k, &(&a + a.transpose()));
            }
        }
        p
    }

    fn random_kernel(rng: &mut ChaCha8Rng, n: usize, r: usize, c: usize) -> KernelField {
        KernelField::from_fn(n, r, c, |_, _| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn mul_23_examples() {
        let n = 4;
        let mut p = RiccatiSolution::zeros(n, 1, 1, 0.25);
        let g = DMatrix::from_element(1, 1, 3.0);
        for k in 0..=n {
            p.p2.set(k, &g);
        }
        let m = const_field(n, 1, 1, 2.0);
        for k in 0..n {
            assert_eq!(mul_23(&m, &p, Side::Left, k)[(0, 0)], 6.0);
        }
        let zero = RiccatiSolution::zeros(n, 1, 1, 0.25);
        assert_eq!(mul_23(&m, &zero, Side::Right, 1)[(0, 0)], 0.0);
        let mut p = RiccatiSolution::zeros(n, 1, 1, 0.25);
        for i in 1..=n {
            for j in 0..i {
                p.p3.set(i, j, &DMatrix::from_element(1, 1, 1.0));
            }
        }
        let one = const_field(n, 1, 1, 1.0);
        assert!((mul_23(&one, &p, Side::Left, 0)[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(mul_23(&one, &p, Side::Left, n)[(0, 0)], 0.0);
    }

    #[test]
    fn mul_134_examples() {
        let n = 4;
        let mut p = RiccatiSolution::zeros(n, 2, 1, 0.25);
        for k in 0..=n {
            p.p1.set(k, &DMatrix::identity(2, 2));
        }
        let m = KernelField::from_fn(n, 2, 2, |_, _| DMatrix::identity(2, 2) * 1.5);
        for k in 0..n {
            for i in k + 1..=n {
                assert_eq!(mul_134(&m, &p, Side::Left, i, k), DMatrix::identity(2, 2) * 1.5);
            }
        }
        let mut p = RiccatiSolution::zeros(n, 1, 1, 0.25);
        for k in 0..n {
            for i in k + 1..=n {
                for j in k + 1..=i {
                    p.p4.set(i, j, k, &DMatrix::from_element(1, 1, 0.7));
                }
            }
        }
        let one = const_field(n, 1, 1, 1.0);
        let got = mul_134(&one, &p, Side::Left, 2, 0)[(0, 0)];
        assert!((got - 0.25 * 4.0 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn sandwich_examples() {
        let n = 8;
        let dt = 1.0 / n as f64;
        let one = const_field(n, 1, 1, 1.0);
        let mut p = RiccatiSolution::zeros(n, 1, 1, dt);
        for k in 0..=n {
            p.p1.set(k, &DMatrix::from_element(1, 1, 1.0));
        }
        for k in 0..n {
            assert!((sandwich(&one, &p, &one, k)[(0, 0)] - dt * (n - k) as f64).abs() < 1e-14);
        }
        let mut p = RiccatiSolution::zeros(n, 1, 1, dt);
        for k in 0..=n {
            p.p2.set(k, &DMatrix::from_element(1, 1, 2.5));
        }
        assert_eq!(sandwich(&one, &p, &one, 3)[(0, 0)], 2.5);
        let mut p = RiccatiSolution::zeros(n, 1, 1, dt);
        for i in 1..=n {
            for j in 0..i {
                p.p3.set(i, j, &DMatrix::from_element(1, 1, 1.0));
            }
        }
        assert!((sandwich(&one, &p, &one, 0)[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn aggregate_examples() {
        let n = 5;
        let dt = 0.2;
        let mut p = RiccatiSolution::zeros(n, 2, 1, dt);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        for k in 0..=n {
            p.p2.set(k, &g);
        }
        assert_eq!(aggregate(&p, 2), g);
        let mut p = RiccatiSolution::zeros(n, 2, 1, dt);
        for k in 0..=n {
            p.p1.set(k, &(DMatrix::identity(2, 2) * 3.0));
        }
        assert!(max_abs(&(aggregate(&p, 0) - DMatrix::identity(2, 2) * (3.0 * dt * n as f64))) < 1e-14);
    }

    #[test]
    fn constant_operands_collapse_onto_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &d in &[1usize, 2] {
            let n = 6;
            let p = random_solution(&mut rng, n, d);
            let m = DMatrix::from_fn(2, d, |_, _| rng.random_range(-1.0..1.0));
            let nn = DMatrix::from_fn(d, 3, |_, _| rng.random_range(-1.0..1.0));
            let mf = KernelField::from_fn(n, 2, d, |_, _| m.clone());
            let nf = KernelField::from_fn(n, d, 3, |_, _| nn.clone());
            for k in 0..n {
                let lhs = sandwich(&mf, &p, &nf, k);
                let rhs = &m * aggregate(&p, k) * &nn;
                assert!(max_abs(&(lhs - rhs)) < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_dualities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let d = 2;
        let p = random_solution(&mut rng, n, d);
        let m = random_kernel(&mut rng, n, 3, d);
        let mt = m.transpose_blocks();
        let nf = random_kernel(&mut rng, n, d, 2);
        for k in 0..n {
            for i in k + 1..=n {
                let l = mul_134(&m, &p, Side::Left, i, k);
                let r = mul_134(&mt, &p, Side::Right, i, k);
                assert!(max_abs(&(l.transpose() - r)) < 1e-12);
            }
            let l = mul_23(&m, &p, Side::Left, k);
            let r = mul_23(&mt, &p, Side::Right, k);
            assert!(max_abs(&(l.transpose() - r)) < 1e-12);
            let s = sandwich(&m, &p, &nf, k);
            let st = sandwich(&nf.transpose_blocks(), &p, &mt, k);
            assert!(max_abs(&(s.transpose() - st)) < 1e-12);
        }
    }

    #[test]
    fn rules_are_linear_in_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let d = 2;
        let p = random_solution(&mut rng, n, d);
        let q = random_solution(&mut rng, n, d);
        let mut sum = p.clone();
        for k in 0..=n {
            sum.p1.set(k, &(p.p1.get(k) + q.p1.get(k)));
            sum.p2.set(k, &(p.p2.get(k) + q.p2.get(k)));
        }
        for i in 1..=n {
            for j in 0..i {
                sum.p3.set(i, j, &(p.p3.get(i, j) + q.p3.get(i, j)));
            }
        }
        for k in 0..n {
            for i in k + 1..=n {
                for j in k + 1..=i {
                    sum.p4.set(i, j, k, &(p.p4.get(i, j, k) + q.p4.get(i, j, k)));
                }
            }
        }
        let m = random_kernel(&mut rng, n, 1, d);
        let nf = random_kernel(&mut rng, n, d, 1);
        for k in 0..n {
            let lin = |f: &dyn Fn(&RiccatiSolution) -> DMatrix<f64>| {
                let (a, b, c) = (f(&p), f(&q), f(&sum));
                max_abs(&(c - a - b))
            };
            assert!(lin(&|x| sandwich(&m, x, &nf, k)) < 1e-12);
            assert!(lin(&|x| aggregate(x, k)) < 1e-12);
            assert!(lin(&|x| mul_23(&m, x, Side::Left, k)) < 1e-12);
            assert!(lin(&|x| mul_134(&nf, x, Side::Right, n, k)) < 1e-12);
        }
    }

    #[test]
    fn orders_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 7;
        let p = random_solution(&mut rng, n, 2);
        let m = random_kernel(&mut rng, n, 1, 2);
        let nf = random_kernel(&mut rng, n, 2, 1);
        for k in 0..n {
            let a = sandwich_ordered(&m, &p, &nf, k, SumOrder::Forward);
            let b = sandwich_ordered(&m, &p, &nf, k, SumOrder::Reverse);
            assert!(max_abs(&(a - b)) < 1e-13);
        }
    }
}
