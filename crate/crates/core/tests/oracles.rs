//! Analytic quantities against independent numerical oracles.

mod common;

use approx::assert_relative_eq;
use common::{gaussian, random_point, rel_err};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wflow::linalg::{self, PowerOptions, SymmetricOperator};
use wflow::model::generate_design;
use wflow::objective::{self, HessianOperator};
use wflow::{DesignKind, Signal};

fn fd_gradient(d: &wflow::DesignEnsemble, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            (objective::loss(d, &xp).unwrap() - objective::loss(d, &xm).unwrap()) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..100u64 {
        let n = 3 + (k as usize % 6);
        let (d, _) = gaussian(n, 10 * n, k);
        let x = random_point(&mut rng, n, 1.0);
        let g = objective::gradient(&d, &x).unwrap();
        let fd = fd_gradient(&d, &x, 1e-5);
        assert!(rel_err(&fd, &g) <= 1e-6, "pair {k}: {}", rel_err(&fd, &g));
    }
}

#[test]
fn hessian_matches_gradient_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..20u64 {
        let n = 4;
        let (d, _) = gaussian(n, 60, 100 + k);
        let x = random_point(&mut rng, n, 1.0);
        let hmat = objective::hessian(&d, &x).unwrap();
        assert!(hmat.max_asymmetry() <= 1e-12);
        let h = 1e-5;
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let gp = objective::gradient(&d, &xp).unwrap();
            let gm = objective::gradient(&d, &xm).unwrap();
            let col: Vec<f64> = (0..n).map(|i| hmat.get(i, j)).collect();
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(rel_err(&fd, &col) <= 1e-5);
        }
    }
}

#[test]
fn hessian_at_truth_is_near_its_expectation() {
    let (d, s) = gaussian(50, 50_000, 3);
    let mut h = objective::hessian(&d, s.entries()).unwrap();
    let mut expected = linalg::DenseSymmetric::zeros(50);
    for i in 0..50 {
        expected.set(i, i, 2.0);
    }
    expected.set(0, 0, 6.0);
    h.add_scaled(-1.0, &expected);
    let dev = linalg::power_iteration(&h, PowerOptions::default());
    assert!(dev.converged);
    assert!(dev.magnitude <= 0.5, "{}", dev.magnitude);
}

#[test]
fn power_iteration_agrees_with_dense_eigensolver() {
    let n = 50;
    let (d, _) = gaussian(n, 2000, 8);
    let x = random_point(&mut ChaCha8Rng::seed_from_u64(8), n, 0.3);
    let op = HessianOperator::new(&d, &x).unwrap();
    let dense = objective::hessian(&d, &x).unwrap();
    let mat = DMatrix::from_fn(n, n, |i, j| dense.get(i, j));
    let eig = mat.symmetric_eigen();
    let spectral = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let opts = PowerOptions {
        tol: 1e-12,
        max_iters: 20_000,
        seed: 1,
    };
    let r = linalg::power_iteration(&op, opts);
    assert!(r.converged);
    assert_relative_eq!(r.magnitude, spectral, max_relative = 1e-6);

    let ext = linalg::extreme_eigenvalues(&dense, opts);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    assert_relative_eq!(ext.max, hi, max_relative = 1e-6);
    assert_relative_eq!(ext.min, lo, epsilon = 1e-5 * hi);
}

#[test]
fn hessian_operator_is_consistent_with_dense() {
    let (d, _) = gaussian(7, 70, 5);
    let x = vec![0.2, -0.1, 0.4, 0.0, 0.3, -0.5, 0.1];
    let op = HessianOperator::new(&d, &x).unwrap();
    let dense = objective::hessian(&d, &x).unwrap();
    let v = vec![1.0, 2.0, -1.0, 0.5, 0.0, 0.3, -0.7];
    let mut a = vec![0.0; 7];
    let mut b = vec![0.0; 7];
    op.apply(&v, &mut a);
    dense.apply(&v, &mut b);
    assert!(rel_err(&a, &b) <= 1e-13);
}

#[test]
fn residual_identity_and_signal_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..30u64 {
        let n = 20;
        let (d, s) = gaussian(n, 200, 500 + k);
        let x = random_point(&mut rng, n, 0.4);
        let br = objective::fluctuation(&d, &x, &s).unwrap();
        let terms = br.terms.unwrap();
        assert!((terms.combined() - br.r1).abs() <= 1e-9, "{} vs {}", terms.combined(), br.r1);

        let eta = 0.1;
        let g = objective::gradient(&d, &x).unwrap();
        let next = x[0] - eta * g[0];
        let nx2 = linalg::dot(&x, &x);
        let predicted = (1.0 + 3.0 * eta * (1.0 - nx2)) * x[0] - eta * br.r1;
        assert!((next - predicted).abs() <= 1e-9);
    }
}

#[test]
fn residual_scales_like_inverse_root_m() {
    let n = 50;
    let x = {
        let mut v = random_point(&mut ChaCha8Rng::seed_from_u64(99), n, 1.0);
        let nv = linalg::norm(&v);
        linalg::scale(1.0 / nv, &mut v);
        v
    };
    let s = Signal::e1(n).unwrap();
    let med = |m: usize| {
        let vals: Vec<f64> = (0..50u64)
            .map(|k| {
                let d = generate_design(n, m, DesignKind::Gaussian, &s, 1000 + k, 0).unwrap();
                objective::fluctuation(&d, &x, &s).unwrap().r1.abs()
            })
            .collect();
        linalg::median(&vals)
    };
    let ratio = med(2000) / med(32_000);
    assert!((2.8..=5.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn population_gradient_is_the_design_average() {
    // Large-m empirical gradient converges to the population gradient.
    let (d, s) = gaussian(10, 200_000, 4);
    let x = vec![0.3, 0.5, -0.2, 0.1, 0.0, 0.2, -0.4, 0.1, 0.3, -0.1];
    let g = objective::gradient(&d, &x).unwrap();
    let pg = objective::population_gradient(&x, &s).unwrap();
    assert!(rel_err(&g, &pg) <= 0.05, "{}", rel_err(&g, &pg));
}

#[test]
fn loo_gradient_identity() {
    let (d, _) = gaussian(6, 40, 2);
    let x = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.7];
    let g = objective::gradient(&d, &x).unwrap();
    for l in [0, 17, 39] {
        let a = d.row(l);
        let s = linalg::dot(a, &x);
        let w = (s * s - d.measurements()[l]) * s / 40.0;
        let want: Vec<f64> = g.iter().zip(a).map(|(gi, ai)| gi - w * ai).collect();
        let got = objective::loo_gradient(&d, &x, l).unwrap();
        for (u, v) in got.iter().zip(&want) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn rotation_equivariance_of_the_gradient() {
    // Rotating design and signal together rotates the gradient.
    let n = 8;
    let s = Signal::new(vec![0.5, -0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let d = generate_design(n, 80, DesignKind::Gaussian, &s, 6, 0).unwrap();
    let h = linalg::Householder::to_first_axis(s.entries());
    let e1 = Signal::e1(n).unwrap();
    let dt = d.transformed(&h, &e1).unwrap();
    let x = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.1, 0.0, 0.2];
    let g = objective::gradient(&d, &x).unwrap();
    let gt = objective::gradient(&dt, &h.apply(&x)).unwrap();
    assert!(rel_err(&gt, &h.apply(&g)) <= 1e-12);
}
