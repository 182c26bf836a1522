use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;

use super::*;
use crate::instances::{hand_qp, random_smooth, random_strategy, scalar_config, smooth_input};
use crate::kernels::KernelSpec;
use crate::problem::build_problem;

fn unit_input(problem: &ProblemInstance) -> InputCondition {
    InputCondition::constant(problem, 0, &DVector::from_element(problem.d, 1.0))
}

#[test]
fn zero_problem_freezes_the_free_term() {
    let p = build_problem(&scalar_config(1.0, 5, 0.0, 1.0, 0.0)).unwrap();
    let s = Strategy::zeros(5, 1, 1, p.dt());
    let input = smooth_input(&p, 0, 4, false);
    let ens = simulate(&p, &s, &input, &SimOptions::new(3, 9)).unwrap();
    for path in &ens.paths {
        for k in 0..=5 {
            assert_eq!(path.x[k], *input.phi1_at(k));
            assert_eq!(path.sx2[k], input.phi2);
        }
        assert!(path.u.iter().all(|u| u[0] == 0.0));
    }
    let mc = mc_cost(&ens, &p);
    assert_eq!((mc.mean, mc.stderr), (0.0, 0.0));
    assert_eq!(exact_cost(&p, Policy::feedback(&s), &input).unwrap(), 0.0);
}

#[test]
fn constant_control_integrates_exactly() {
    let n = 8;
    let mut cfg = scalar_config(1.0, n, 0.0, 1.0, 0.0);
    cfg.kernels.b = KernelSpec::scalar_constant(1.0);
    let p = build_problem(&cfg).unwrap();
    let mut s = Strategy::zeros(n, 1, 1, p.dt());
    let c = 0.75;
    for k in 0..=n {
        s.v.set(k, &DMatrix::from_element(1, 1, c));
    }
    let ens = simulate(&p, &s, &unit_input(&p), &SimOptions::new(2, 1)).unwrap();
    for path in &ens.paths {
        for k in 0..=n {
            let want = 1.0 + c * k as f64 * p.dt();
            assert!((path.x[k][0] - want).abs() <= 1e-14);
        }
    }
}

#[test]
fn open_loop_zero_matches_zero_strategy_bitwise() {
    let p = random_smooth(2, 10);
    let input = smooth_input(&p, 0, 2, false);
    let opts = SimOptions::new(4, 77);
    let a = simulate(&p, &Strategy::zeros(10, 1, 1, p.dt()), &input, &opts).unwrap();
    let b = simulate_open_loop(&p, &NodeField::zeros(10, 1, 1), &input, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hand_qp_open_loop_optimum() {
    let (p, input) = hand_qp();
    let u = NodeField::constant(2, &DMatrix::from_element(1, 1, -0.5));
    let ens = simulate_open_loop(&p, &u, &input, &SimOptions::new(1, 0)).unwrap();
    assert!((ens.paths[0].sx2[2][0] - 0.5).abs() <= 1e-15);
    let mc = mc_cost(&ens, &p);
    assert!((mc.mean - 0.5).abs() <= 1e-15);
    assert_eq!(mc.stderr, 0.0);
    let exact = exact_cost(&p, Policy::OpenLoop(&u), &input).unwrap();
    assert!((exact - 0.5).abs() <= 1e-12);
}

#[test]
fn restart_from_checkpoint_is_bitwise() {
    let p = random_smooth(5, 12);
    let s = random_strategy(&p, 0.5, 5);
    let input = smooth_input(&p, 0, 5, false);
    let opts = SimOptions { n_paths: 3, seed: 11, checkpoints: vec![4, 9] };
    let ens = simulate(&p, &s, &input, &opts).unwrap();
    for (i, path) in ens.paths.iter().enumerate() {
        for cp in &path.checkpoints {
            let tail = simulate_from(&p, Policy::feedback(&s), cp, 11, i, &[]).unwrap();
            let off = cp.k;
            assert_eq!(tail.x[..], path.x[off..]);
            assert_eq!(tail.u[..], path.u[off..]);
            assert_eq!(tail.sx2[..], path.sx2[off..]);
            assert_eq!(cp.state(), &path.x[off]);
        }
    }
}

#[test]
fn seed_determinism_and_csv() {
    let p = random_smooth(1, 6);
    let s = random_strategy(&p, 0.3, 1);
    let input = smooth_input(&p, 0, 1, false);
    let opts = SimOptions::new(5, 3);
    let a = simulate(&p, &s, &input, &opts).unwrap();
    let b = simulate(&p, &s, &input, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(mc_cost(&a, &p), mc_cost(&b, &p));
    let mut buf = Vec::new();
    write_ensemble_csv(&a, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("path,k,x_0,u_0,sx2_0"));
    assert_eq!(text.lines().count(), 1 + 5 * 7);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("4,6,") && last.contains(",,"));
}

#[test]
fn exact_cost_equals_single_path_when_deterministic() {
    let mut cfg = crate::instances::random_smooth_config(4, 10);
    cfg.kernels.c = KernelSpec::Zero;
    cfg.kernels.d = KernelSpec::Zero;
    let p = build_problem(&cfg).unwrap();
    let s = random_strategy(&p, 0.5, 8);
    let input = smooth_input(&p, 2, 8, false);
    let ens = simulate(&p, &s, &input, &SimOptions::new(1, 0)).unwrap();
    let path = path_cost(&ens.paths[0], &p);
    let exact = exact_cost(&p, Policy::feedback(&s), &input).unwrap();
    assert!((path - exact).abs() <= 1e-12 * path.abs().max(1.0), "{path} vs {exact}");
}

#[test]
fn lyapunov_constant_collapse() {
    let (q, g) = (0.7, 1.9);
    let p = build_problem(&scalar_config(1.0, 8, q, 1.0, g)).unwrap();
    let s = Strategy::zeros(8, 1, 1, p.dt());
    let j = lyapunov_cost(&p, &s, &unit_input(&p), None).unwrap();
    assert!((j - (g + q)).abs() <= 1e-12, "{j}");
}

#[test]
fn lyapunov_matches_exact_cost() {
    for seed in 0..3 {
        let p = random_smooth(seed, 9);
        let s = random_strategy(&p, 0.6, seed + 100);
        let input = smooth_input(&p, 1, seed, false);
        let off = crate::instances::random_direction(&p, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let ly = lyapunov_cost(&p, &s, &input, Some(&off)).unwrap();
        let pol = Policy::Feedback { strategy: &s, offset: Some(&off) };
        let ex = exact_cost(&p, pol, &input).unwrap();
        assert!((ly - ex).abs() <= 1e-10 * ex.abs().max(1.0), "{ly} vs {ex}");
        let sol = lyapunov_system(&p, &s, &input, None).unwrap();
        for a in 0..=9 {
            assert!(crate::linalg::asymmetry(&sol.l1.get(a).into_owned()) <= 1e-10);
            for b in 0..=9 {
                let diff = sol.l2.get(a, b) - sol.l2.get(b, a).transpose();
                assert!(crate::linalg::max_abs(&diff) <= 1e-10);
            }
        }
    }
}

#[test]
fn exact_cost_cap() {
    let p = random_smooth(0, 20);
    let s = Strategy::zeros(20, 1, 1, p.dt());
    let r = exact_cost_capped(&p, Policy::feedback(&s), &unit_input(&p), 10);
    assert!(matches!(r, Err(Error::CapExceeded(_))));
}
