use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vlq_core::closed_loop::{exact_cost, mc_cost, path_cost, simulate, simulate_open_loop, Policy, SimOptions};
use vlq_core::feedback::{strategy_residuals, synthesize_strategy, value, Strategy};
use vlq_core::instances::{random_input, random_matrix_config, random_smooth, random_smooth_config, scalar_config, smooth_input};
use vlq_core::kernels::KernelSpec;
use vlq_core::linalg::{max_abs, pinv};
use vlq_core::problem::WeightSpec;
use vlq_core::riccati::{solve_riccati, SolverOptions};
use vlq_core::{aggregate, build_problem, InputCondition, NodeField, ProblemInstance, RiccatiSolution};

fn solve(p: &ProblemInstance) -> RiccatiSolution {
    solve_riccati(p, &SolverOptions::default()).unwrap()
}

fn ones(p: &ProblemInstance) -> InputCondition {
    InputCondition::constant(p, 0, &DVector::from_element(p.d, 1.0))
}

#[test]
fn synthesis_satisfies_its_equations() {
    for seed in 0..3 {
        let p = build_problem(&random_matrix_config(seed, 8, 2, 2)).unwrap();
        let sol = solve(&p);
        let s = synthesize_strategy(&sol, &p).unwrap();
        assert!(strategy_residuals(&s, &sol).iter().all(|r| *r <= 1e-10));
    }
}

#[test]
fn no_control_kernel_gives_markovian_feedback() {
    let mut cfg = random_matrix_config(2, 8, 2, 1);
    cfg.kernels.b = KernelSpec::Zero;
    let p = build_problem(&cfg).unwrap();
    let s = synthesize_strategy(&solve(&p), &p).unwrap();
    assert!(s.theta1.max_abs() > 0.0);
    assert_eq!(s.theta2.max_abs() + s.theta3.max_abs() + s.v.max_abs(), 0.0);
}

#[test]
fn no_control_noise_removes_the_state_gain() {
    let mut cfg = random_smooth_config(5, 10);
    cfg.kernels.d = KernelSpec::Zero;
    let p = build_problem(&cfg).unwrap();
    let s = synthesize_strategy(&solve(&p), &p).unwrap();
    assert_eq!(s.theta1.max_abs(), 0.0);
    assert!(s.theta3.max_abs() > 0.0);
}

#[test]
fn constant_coefficients_collapse_onto_the_aggregate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rand::Rng::random_range(&mut rng, -0.8..0.8));
    let (d, l) = (2, 2);
    let (a, b, c, dk) = (draw(d, d), draw(d, l), draw(d, d), draw(d, l));
    let mut cfg = random_matrix_config(1, 10, d, l);
    cfg.kernels.a = KernelSpec::constant(&a);
    cfg.kernels.b = KernelSpec::constant(&b);
    cfg.kernels.c = KernelSpec::constant(&c);
    cfg.kernels.d = KernelSpec::constant(&dk);
    let p = build_problem(&cfg).unwrap();
    let sol = solve(&p);
    let s = synthesize_strategy(&sol, &p).unwrap();
    for k in 0..10 {
        let agg = aggregate(&sol, k);
        let mut total = s.theta1.get(k) + s.theta3.get(k);
        for r in k + 1..=10 {
            total += s.theta2.get(r, k) * p.dt();
        }
        let rbar = p.r.get(k) + dk.transpose() * &agg * &dk;
        let want = -(pinv(&rbar).unwrap() * (b.transpose() * &agg + dk.transpose() * &agg * &c));
        assert!(max_abs(&(total - want)) <= 1e-10, "node {k}");
    }
}

#[test]
fn value_examples() {
    let (q, g) = (0.3, 1.7);
    let p = build_problem(&scalar_config(1.0, 8, q, 1.0, g)).unwrap();
    let sol = solve(&p);
    assert!((value(&sol, &ones(&p)) - (g + q)).abs() <= 1e-14);

    let p = random_smooth(0, 8);
    let zero = RiccatiSolution::zeros(8, 1, 1, p.dt());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(value(&zero, &random_input(&p, 3, &mut rng)), 0.0);
}

#[test]
fn state_noise_second_moment_matches_monte_carlo() {
    let n = 16;
    let mut cfg = scalar_config(1.0, n, 0.0, 1.0, 1.0);
    cfg.kernels.c = KernelSpec::scalar_constant(1.0);
    let p = build_problem(&cfg).unwrap();
    let s = Strategy::zeros(n, 1, 1, p.dt());
    let input = ones(&p);
    // multiplicative noise: E[X_{k+1}^2] = (1 + dt) E[X_k^2]
    let ex = exact_cost(&p, Policy::feedback(&s), &input).unwrap();
    let want = (1.0 + p.dt()).powi(n as i32);
    assert!((ex - want).abs() <= 1e-12, "{ex}");
    let ens = simulate(&p, &s, &input, &SimOptions::new(10_000, 5)).unwrap();
    let mc = mc_cost(&ens, &p);
    assert!((mc.mean - ex).abs() <= 3.0 * mc.stderr, "{mc:?} vs {ex}");
    // the realized state is the own-node entry of the forecast
    for path in ens.paths.iter().take(10) {
        assert_eq!(path.x[n], path.sx2[n]);
    }
}

#[test]
fn uncontrolled_deterministic_cost_is_a_quadrature() {
    let mut cfg = random_smooth_config(6, 12);
    cfg.kernels.c = KernelSpec::Zero;
    cfg.kernels.d = KernelSpec::Zero;
    cfg.kernels.a = KernelSpec::Zero;
    let p = build_problem(&cfg).unwrap();
    let input = smooth_input(&p, 0, 6, false);
    let ens = simulate_open_loop(&p, &NodeField::zeros(12, 1, 1), &input, &SimOptions::new(1, 0)).unwrap();
    let mut want = input.phi2.dot(&(&p.g * &input.phi2));
    for k in 0..12 {
        let x = input.phi1_at(k);
        want += x.dot(&(p.q.get(k) * x)) * p.dt();
    }
    assert!((path_cost(&ens.paths[0], &p) - want).abs() <= 1e-14);
    assert_eq!(mc_cost(&ens, &p).stderr, 0.0);
}

#[test]
fn deterministic_ensemble_has_zero_spread() {
    let mut cfg = random_smooth_config(2, 10);
    cfg.kernels.c = KernelSpec::Zero;
    cfg.kernels.d = KernelSpec::Zero;
    let p = build_problem(&cfg).unwrap();
    let s = synthesize_strategy(&solve(&p), &p).unwrap();
    let ens = simulate(&p, &s, &smooth_input(&p, 0, 2, false), &SimOptions::new(20, 9)).unwrap();
    assert_eq!(mc_cost(&ens, &p).stderr, 0.0);
}

#[test]
fn exact_cost_of_synthesized_strategy_tracks_the_value() {
    let err = |n: usize| {
        let p = random_smooth(2, n);
        let sol = solve(&p);
        let s = synthesize_strategy(&sol, &p).unwrap();
        let input = smooth_input(&p, 0, 2, true);
        let j = exact_cost(&p, Policy::feedback(&s), &input).unwrap();
        (j - value(&sol, &input)).abs() / j
    };
    let (a, b) = (err(16), err(32));
    assert!(b < a && b < 0.05, "{a} -> {b}");
}

#[test]
fn cost_weights_scale_the_value() {
    let cfg = random_smooth_config(8, 10);
    let mut scaled = cfg.clone();
    let factor = 3.0;
    let scale = |w: &WeightSpec| match w {
        WeightSpec::Constant(vlq_core::MatrixSpec::Scalar(x)) => WeightSpec::scalar(x * factor),
        _ => unreachable!(),
    };
    scaled.cost.q = scale(&cfg.cost.q);
    scaled.cost.r = scale(&cfg.cost.r);
    scaled.cost.g = match cfg.cost.g {
        vlq_core::MatrixSpec::Scalar(x) => vlq_core::MatrixSpec::Scalar(x * factor),
        _ => unreachable!(),
    };
    let (p, ps) = (build_problem(&cfg).unwrap(), build_problem(&scaled).unwrap());
    let input = smooth_input(&p, 0, 8, false);
    let (v, vs) = (value(&solve(&p), &input), value(&solve(&ps), &input));
    assert!((vs - factor * v).abs() <= 1e-12 * vs.abs());
}
