#![allow(dead_code)]

use rand::Rng;
use wflow::model::generate_design;
use wflow::{DesignEnsemble, DesignKind, Signal};

pub fn gaussian(n: usize, m: usize, seed: u64) -> (DesignEnsemble, Signal) {
    let s = Signal::e1(n).unwrap();
    let d = generate_design(n, m, DesignKind::Gaussian, &s, seed, 0).unwrap();
    (d, s)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn random_point(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}
