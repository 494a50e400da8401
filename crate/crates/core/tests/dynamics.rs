//! Trajectory-level behaviour of the solver and the auxiliary sequences.

mod common;

use common::gaussian;
use wflow::auxiliary::{run_bundle, sample_indices, BundleOptions, FlipSource};
use wflow::objective;
use wflow::solver::{self, InitMode, RunConfig};
use wflow::state_evolution::{self, SEPoint};
use wflow::Signal;

#[test]
fn population_descent_tracks_the_scalar_recursion() {
    let n = 50;
    let s = Signal::e1(n).unwrap();
    let x0 = solver::random_init(n, 1.0, 3);
    let rec = solver::run_population(x0.clone(), &s, 0.1, 300, 0.0).unwrap();
    let p0 = SEPoint::new(x0[0].abs(), wflow::linalg::norm(&x0[1..]));
    let mut p = p0;
    for r in &rec.records {
        assert!((r.alpha - p.alpha).abs() <= 1e-10 && (r.beta - p.beta).abs() <= 1e-10, "t {}", r.t);
        p = state_evolution::population_step(p, 0.1);
    }
}

#[test]
fn default_run_converges_at_n_1000() {
    let (d, s) = gaussian(1000, 10_000, 1);
    let cfg = RunConfig::standard(1000, 1);
    let x0 = solver::initial_point(&cfg, &d, &s);
    let rec = solver::run(&cfg, &d, &s, x0).unwrap();
    assert!(rec.converged);
    assert!(rec.final_record().unwrap().dist_rel <= 1e-5);
    assert!(rec.iterations_run <= 500);
}

#[test]
fn fixed_init_at_truth_stays() {
    let (d, s) = gaussian(20, 200, 2);
    let mut cfg = RunConfig::standard(20, 2);
    cfg.m = 200;
    cfg.tol = 0.0;
    cfg.max_iters = 5;
    cfg.init_mode = InitMode::Fixed(s.entries().to_vec());
    let rec = solver::run(&cfg, &d, &s, s.entries().to_vec()).unwrap();
    assert!(rec.records.iter().all(|r| r.dist_rel == 0.0));
}

#[test]
fn loo_sequence_never_reads_its_row() {
    let (d, _) = gaussian(30, 300, 5);
    let l = 17;
    let mut poisoned = d.clone();
    poisoned.overwrite_row_keep_measurement(l, &[f64::NAN; 30]);
    let x = solver::random_init(30, 1.0, 5);
    let clean = objective::loo_gradient(&d, &x, l).unwrap();
    let dirty = objective::loo_gradient(&poisoned, &x, l).unwrap();
    assert_eq!(clean, dirty);

    // Descent on the leave-one-out loss is identical with the row poisoned.
    let mut a = x.clone();
    let mut b = x;
    for _ in 0..50 {
        let ga = objective::loo_gradient(&d, &a, l).unwrap();
        let gb = objective::loo_gradient(&poisoned, &b, l).unwrap();
        a.iter_mut().zip(&ga).for_each(|(v, g)| *v -= 0.1 * g);
        b.iter_mut().zip(&gb).for_each(|(v, g)| *v -= 0.1 * g);
    }
    assert_eq!(a, b);
}

#[test]
fn matching_flips_reproduce_the_base_bitwise() {
    let (d, s) = gaussian(40, 400, 6);
    let mut cfg = RunConfig::standard(40, 6);
    cfg.m = 400;
    cfg.max_iters = 200;
    let x0 = solver::random_init(40, 1.0, 6);
    let opts = BundleOptions {
        loo_indices: sample_indices(400, 3, 6),
        flips: FlipSource::Matching,
        keep_snapshots: true,
    };
    let b = run_bundle(&cfg, &d, &s, x0, &opts).unwrap();
    for (r, sg) in b.base.records.iter().zip(&b.sgn) {
        assert_eq!(r.snapshot.as_ref().unwrap(), sg);
    }
    assert!(b.curves.d_sgn.iter().all(|&v| v == 0.0));
    for l in &b.loo_indices {
        assert_eq!(b.loo[l], b.sgn_loo[l]);
    }
}

#[test]
fn first_step_envelopes() {
    let n = 300;
    let m = 3000;
    let (d, s) = gaussian(n, m, 7);
    let mut cfg = RunConfig::standard(n, 7);
    cfg.max_iters = 1;
    let x0 = solver::random_init(n, 1.0, 7);
    let opts = BundleOptions {
        loo_indices: sample_indices(m, 5, 7),
        flips: FlipSource::Random(7),
        keep_snapshots: false,
    };
    let b = run_bundle(&cfg, &d, &s, x0, &opts).unwrap();
    let c = &b.curves;
    let mf = m as f64;
    assert_eq!(c.t, vec![0, 1]);
    assert!(c.d_loo.as_ref().unwrap()[1] <= 10.0 / mf.sqrt());
    assert!(c.d_loo_par.as_ref().unwrap()[1] <= 100.0 / mf);
    assert!(c.d_sgn[1] <= 10.0 / mf.sqrt());
    assert!(c.d_double.as_ref().unwrap()[1] <= 100.0 / mf);
}

#[test]
fn population_path_avoids_the_saddle() {
    let n = 1000;
    let ln = (n as f64).ln();
    let tr = state_evolution::population_run(SEPoint::new(1.0 / (n as f64 * ln).sqrt(), 1.0), 0.1, 1000, 0.1);
    let t_gamma = tr.stage_times.unwrap().t_gamma.unwrap();
    assert!(t_gamma as f64 <= 60.0 * ln);
    let closest = tr
        .points
        .iter()
        .map(|p| (p.alpha.powi(2) + (p.beta - 1.0 / 3f64.sqrt()).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min);
    assert!(closest > 0.0);
}

#[test]
fn round_trip_through_perturbations() {
    let (d, s) = gaussian(100, 1000, 8);
    let cfg = RunConfig::standard(100, 8);
    let x0 = solver::initial_point(&cfg, &d, &s);
    let rec = solver::run(&cfg, &d, &s, x0).unwrap();
    let pts = rec.points();
    let ex = state_evolution::extract_perturbations(&pts, 0.1).unwrap();
    let back = state_evolution::apply_perturbations(pts[0], 0.1, &ex.zetas, &ex.rhos);
    for (a, b) in back.iter().zip(&ex.points) {
        assert!((a.alpha - b.alpha).abs() <= 1e-10 * b.alpha.abs().max(1.0));
        assert!((a.beta - b.beta).abs() <= 1e-10 * b.beta.abs().max(1.0));
    }
}

#[test]
fn rademacher_design_with_axis_signal_is_uninformative() {
    let s = Signal::e1(10).unwrap();
    let d = wflow::model::generate_design(10, 50, wflow::DesignKind::Rademacher, &s, 1, 0).unwrap();
    assert!(d.measurements().iter().all(|&y| y == 1.0));
    let r = solver::default_signal(10, wflow::DesignKind::Rademacher, 1).unwrap();
    assert!((r.norm() - 1.0).abs() <= 1e-12);
    assert!(!r.is_unit_first_axis());
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let (d, s) = gaussian(200, 2000, 9);
    let cfg = RunConfig::standard(200, 9);
    let go = || {
        let x0 = solver::initial_point(&cfg, &d, &s);
        solver::run(&cfg, &d, &s, x0).unwrap()
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(go);
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(go);
    assert_eq!(one, four);
}
