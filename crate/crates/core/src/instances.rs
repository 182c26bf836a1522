//! Reference and seeded random instances shared by tests, the acceptance
//! harness and the command line.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::feedback::Strategy;
use crate::fields::NodeField;
use crate::kernels::{ConvolutionParams, KernelSpec, MatrixSpec, ScalarFn, SeparableParams};
use crate::problem::{
    build_problem, CostSpec, Dims, GridSpec, InputCondition, KernelSet, ProblemConfig, ProblemInstance, WeightSpec,
};

/// Zero kernels with scalar weights `Q = q`, `R = r`, `G = g`.
pub fn scalar_config(horizon: f64, n: usize, q: f64, r: f64, g: f64) -> ProblemConfig {
    ProblemConfig {
        dims: Dims { d: 1, l: 1 },
        grid: GridSpec { horizon, n },
        kernels: KernelSet::zero(),
        cost: CostSpec { q: WeightSpec::scalar(q), r: WeightSpec::scalar(r), g: MatrixSpec::Scalar(g) },
    }
}

fn build(cfg: &ProblemConfig) -> ProblemInstance {
    build_problem(cfg).expect("reference configuration is valid")
}

/// `d = l = 1`, `T = 1`, `N = 2`, `B = 1`, `Q = 0`, `R = G = 1`, unit free term.
pub fn hand_qp() -> (ProblemInstance, InputCondition) {
    let mut cfg = scalar_config(1.0, 2, 0.0, 1.0, 1.0);
    cfg.kernels.b = KernelSpec::scalar_constant(1.0);
    let p = build(&cfg);
    let input = InputCondition::constant(&p, 0, &DVector::from_element(1, 1.0));
    (p, input)
}

/// Classical scalar problem `dX = u dt`, `Q = 0`, `R = G = 1`.
pub fn sde_config(horizon: f64, n: usize) -> ProblemConfig {
    let mut cfg = scalar_config(horizon, n, 0.0, 1.0, 1.0);
    cfg.kernels.b = KernelSpec::scalar_constant(1.0);
    cfg
}

/// Integro-differential instance with unit memory kernel:
/// `A(t, s) = t - s`, `B = 1`, `Q = 1`, `G = 0`.
pub fn vide_config(n: usize) -> ProblemConfig {
    let mut cfg = scalar_config(1.0, n, 1.0, 1.0, 0.0);
    cfg.kernels.a = KernelSpec::Convolution(ConvolutionParams {
        matrix: MatrixSpec::Scalar(1.0),
        k: ScalarFn::Poly { coeffs: vec![0.0, 1.0] },
    });
    cfg.kernels.b = KernelSpec::scalar_constant(1.0);
    cfg
}

/// Lag samples of the unit memory kernel for [`vide_config`].
pub fn vide_memory(n: usize) -> Vec<DMatrix<f64>> {
    vec![DMatrix::from_element(1, 1, 1.0); n + 1]
}

/// Deterministic Volterra instance `X = phi + int B u` with a fractional
/// control kernel.
pub fn fractional_vie_config(n: usize, hurst: f64) -> ProblemConfig {
    let mut cfg = scalar_config(1.0, n, 1.0, 1.0, 1.0);
    cfg.kernels.b = KernelSpec::fractional(1.0, hurst);
    cfg
}

fn smooth_fn(rng: &mut ChaCha8Rng, amp: f64) -> ScalarFn {
    match rng.random_range(0..3) {
        0 => ScalarFn::Exp { scale: rng.random_range(-amp..amp), rate: rng.random_range(-1.5..0.5) },
        1 => ScalarFn::Cos { scale: rng.random_range(-amp..amp), freq: rng.random_range(0.5..3.0), phase: rng.random_range(0.0..3.0) },
        _ => ScalarFn::Poly { coeffs: vec![rng.random_range(-amp..amp), rng.random_range(-amp..amp)] },
    }
}

fn smooth_kernel(rng: &mut ChaCha8Rng, amp: f64) -> KernelSpec {
    if rng.random_bool(0.5) {
        KernelSpec::Convolution(ConvolutionParams { matrix: MatrixSpec::Scalar(1.0), k: smooth_fn(rng, amp) })
    } else {
        KernelSpec::Separable(SeparableParams {
            matrix: MatrixSpec::Scalar(1.0),
            g: smooth_fn(rng, amp.sqrt()),
            h: smooth_fn(rng, amp.sqrt()),
        })
    }
}

/// Scalar stochastic instance with smooth bounded kernels, uniformly positive
/// `R` and nonnegative `Q`, `G`; deterministic in `seed` for every `n`.
pub fn random_smooth_config(seed: u64, n: usize) -> ProblemConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = rng.random_range(0.0..1.0);
    let r = rng.random_range(0.5..1.5);
    let g = rng.random_range(0.2..1.0);
    let mut cfg = scalar_config(1.0, n, q, r, g);
    cfg.kernels = KernelSet {
        a: smooth_kernel(&mut rng, 0.8),
        b: smooth_kernel(&mut rng, 1.0),
        c: smooth_kernel(&mut rng, 0.5),
        d: smooth_kernel(&mut rng, 0.5),
    };
    cfg
}

pub fn random_smooth(seed: u64, n: usize) -> ProblemInstance {
    build(&random_smooth_config(seed, n))
}

/// Smooth free term `phi1(t) = a + b t + c t^2` from node `k0` with seed `phi2`.
/// With `own_zero` the profile is shifted so that `phi1(t_{k0}) = 0`.
pub fn smooth_input(problem: &ProblemInstance, k0: usize, seed: u64, own_zero: bool) -> InputCondition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e55);
    let d = problem.d;
    let coef: Vec<[f64; 3]> =
        (0..d).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let t0 = problem.grid.node(k0);
    let phi1 = (k0..=problem.n())
        .map(|k| {
            let t = problem.grid.node(k);
            DVector::from_iterator(
                d,
                coef.iter().map(|c| {
                    let f = |t: f64| c[0] + c[1] * t + c[2] * t * t;
                    if own_zero { f(t) - f(t0) } else { f(t) }
                }),
            )
        })
        .collect();
    let phi2 = DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-1.0..1.0)));
    InputCondition::new(k0, phi1, phi2)
}

/// Arbitrary input with entries in `[-1, 1]` (no smoothness across `N`).
pub fn random_input(problem: &ProblemInstance, k0: usize, rng: &mut impl Rng) -> InputCondition {
    let d = problem.d;
    let mut draw = || DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-1.0..1.0)));
    let phi1 = (k0..=problem.n()).map(|_| draw()).collect();
    let phi2 = draw();
    InputCondition::new(k0, phi1, phi2)
}

/// Strategy with every entry drawn from `[-bound, bound]`.
pub fn random_strategy(problem: &ProblemInstance, bound: f64, seed: u64) -> Strategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.n();
    let (d, l) = (problem.d, problem.l);
    let mut s = Strategy::zeros(n, l, d, problem.dt());
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound));
    for k in 0..=n {
        s.theta1.set(k, &draw(l, d));
        s.theta3.set(k, &draw(l, d));
        s.v.set(k, &draw(l, 1));
        for r in 0..=n {
            s.theta2.set(r, k, &draw(l, d));
        }
    }
    s
}

/// Deterministic control direction with entries in `[-1, 1]`.
pub fn random_direction(problem: &ProblemInstance, rng: &mut impl Rng) -> NodeField {
    NodeField::from_fn(problem.n(), problem.l, 1, |_| DMatrix::from_fn(problem.l, 1, |_, _| rng.random_range(-1.0..1.0)))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, amp: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-amp..amp))
}

fn random_psd(rng: &mut ChaCha8Rng, dim: usize, amp: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, dim, dim, amp);
    &m * m.transpose() / dim as f64
}

/// Multi-dimensional stochastic instance: each kernel is a random matrix times
/// a smooth scalar profile, `Q`, `G` random positive semidefinite and
/// `R = r I + PSD` with `r` in `[0.5, 1)`.
pub fn random_matrix_config(seed: u64, n: usize, d: usize, l: usize) -> ProblemConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let kernel = |rows: usize, cols: usize, amp: f64, rng: &mut ChaCha8Rng| {
        let matrix = MatrixSpec::from_matrix(&random_matrix(rng, rows, cols, amp));
        KernelSpec::Convolution(ConvolutionParams { matrix, k: smooth_fn(rng, 1.0) })
    };
    let kernels = KernelSet {
        a: kernel(d, d, 0.8, &mut rng),
        b: kernel(d, l, 1.0, &mut rng),
        c: kernel(d, d, 0.5, &mut rng),
        d: kernel(d, l, 0.5, &mut rng),
    };
    let q = MatrixSpec::from_matrix(&random_psd(&mut rng, d, 1.0));
    let r0 = rng.random_range(0.5..1.0);
    let r = MatrixSpec::from_matrix(&(DMatrix::identity(l, l) * r0 + random_psd(&mut rng, l, 0.5)));
    let g = MatrixSpec::from_matrix(&random_psd(&mut rng, d, 1.0));
    ProblemConfig {
        dims: Dims { d, l },
        grid: GridSpec { horizon: 1.0, n },
        kernels,
        cost: CostSpec { q: WeightSpec::Constant(q), r: WeightSpec::Constant(r), g },
    }
}

pub fn random_matrix_instance(seed: u64, n: usize, d: usize, l: usize) -> ProblemInstance {
    build(&random_matrix_config(seed, n, d, l))
}
