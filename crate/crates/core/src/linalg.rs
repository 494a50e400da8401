//! Small dense kernels plus matrix-free spectral estimates.

use crate::rng;
use rand::Rng;

/// Inner product with four interleaved accumulators.
///
/// The summation order is fixed, so results are reproducible bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn is_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// A real symmetric linear operator known only through products.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// Row-major dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymmetric {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseSymmetric {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// `self += w * v v^T`, upper triangle only. Call [`Self::symmetrize`] after.
    pub fn rank_one_update_upper(&mut self, w: f64, v: &[f64]) {
        let n = self.n;
        for i in 0..n {
            let wi = w * v[i];
            if wi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * n + i..i * n + n];
            axpy(wi, &v[i..], row);
        }
    }

    /// Copy the upper triangle into the lower one.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &DenseSymmetric) {
        axpy(alpha, &other.data, &mut self.data);
    }
}

impl SymmetricOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.n..(i + 1) * self.n], v);
        }
    }
}

/// `A - shift * I` for an operator `A`.
struct Shifted<'a, A: ?Sized> {
    inner: &'a A,
    shift: f64,
}

impl<A: SymmetricOperator + ?Sized> SymmetricOperator for Shifted<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.inner.apply(v, out);
        axpy(-self.shift, v, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PowerOptions {
    /// Relative change in the estimate below which iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerResult {
    /// Largest eigenvalue magnitude, i.e. the spectral norm.
    pub magnitude: f64,
    /// Rayleigh quotient at the final iterate (carries the sign).
    pub rayleigh: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration from a seeded Gaussian start.
///
/// The magnitude estimate is `||A v||` for unit `v`, which is insensitive to
/// a `+lambda / -lambda` pair sharing the top magnitude.
pub fn power_iteration<A: SymmetricOperator + ?Sized>(op: &A, opts: PowerOptions) -> PowerResult {
    let n = op.dim();
    let mut v = rng::gaussian_vec(&mut rng::stream(opts.seed, rng::streams::POWER), n);
    let nv = norm(&v);
    scale(1.0 / nv, &mut v);
    let mut w = vec![0.0; n];
    let mut estimate = 0.0f64;
    let mut rayleigh = 0.0;
    for it in 1..=opts.max_iters {
        op.apply(&v, &mut w);
        rayleigh = dot(&v, &w);
        let next = norm(&w);
        if next == 0.0 {
            return PowerResult {
                magnitude: 0.0,
                rayleigh: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let done = (next - estimate).abs() <= opts.tol * next;
        estimate = next;
        std::mem::swap(&mut v, &mut w);
        scale(1.0 / next, &mut v);
        if done {
            return PowerResult {
                magnitude: estimate,
                rayleigh,
                iterations: it,
                converged: true,
            };
        }
    }
    PowerResult {
        magnitude: estimate,
        rayleigh,
        iterations: opts.max_iters,
        converged: false,
    }
}

/// Smallest and largest eigenvalue of a symmetric operator.
///
/// A first pass finds the dominant eigenvalue `l1`; a second pass on
/// `A - l1 I` finds the eigenvalue at the opposite end of the spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    pub converged: bool,
}

pub fn extreme_eigenvalues<A: SymmetricOperator + ?Sized>(op: &A, opts: PowerOptions) -> Extremes {
    let first = power_iteration(op, opts);
    let l1 = first.rayleigh;
    let shifted = Shifted {
        inner: op,
        shift: l1,
    };
    let second = power_iteration(
        &shifted,
        PowerOptions {
            seed: opts.seed.wrapping_add(1),
            ..opts
        },
    );
    let other = l1 + second.rayleigh;
    Extremes {
        min: l1.min(other),
        max: l1.max(other),
        converged: first.converged && second.converged,
    }
}

/// Householder reflection `H = I - 2 u u^T / (u^T u)`.
///
/// Built so that `H s = ||s|| e_1` for a given `s`; it is an involution and an
/// isometry, which is what moving problems into the `e_1` frame needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Householder {
    u: Vec<f64>,
    uu: f64,
}

impl Householder {
    pub fn to_first_axis(s: &[f64]) -> Self {
        let ns = norm(s);
        let mut u = s.to_vec();
        u[0] -= ns;
        let uu = dot(&u, &u);
        Self { u, uu }
    }

    /// A random reflection, for rotation-invariance checks.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let u = rng::gaussian_vec(rng, n);
        let uu = dot(&u, &u);
        Self { u, uu }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        if self.uu == 0.0 {
            return;
        }
        let c = 2.0 * dot(&self.u, x) / self.uu;
        axpy(-c, &self.u, x);
    }
}

/// Ordinary least squares fit `y = a + b x`; returns `(intercept, slope, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (intercept, slope, r2)
}

/// Median of a slice (NaNs are not expected). Returns NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_relative_eq!(dot(&a, &b), naive, max_relative = 1e-14);
        assert_eq!(dot(&[], &[]), 0.0);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let mut m = DenseSymmetric::zeros(3);
        m.set(0, 0, 1.0);
        m.set(1, 1, -5.0);
        m.set(2, 2, 2.0);
        let r = power_iteration(&m, PowerOptions { tol: 1e-12, ..Default::default() });
        assert!(r.converged);
        assert_relative_eq!(r.magnitude, 5.0, max_relative = 1e-9);
        assert!(r.rayleigh < 0.0);
        let e = extreme_eigenvalues(&m, PowerOptions { tol: 1e-13, max_iters: 5000, seed: 3 });
        assert_relative_eq!(e.min, -5.0, max_relative = 1e-6);
        assert_relative_eq!(e.max, 2.0, max_relative = 1e-6);
    }

    #[test]
    fn zero_operator_has_zero_norm() {
        let m = DenseSymmetric::zeros(4);
        let r = power_iteration(&m, PowerOptions::default());
        assert_eq!(r.magnitude, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn householder_maps_to_first_axis() {
        let s = [0.3, -1.2, 0.4, 2.0];
        let h = Householder::to_first_axis(&s);
        let hs = h.apply(&s);
        assert_relative_eq!(hs[0], norm(&s), max_relative = 1e-14);
        for v in &hs[1..] {
            assert!(v.abs() < 1e-14);
        }
        let back = h.apply(&hs);
        for (a, b) in back.iter().zip(&s) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, -0.5, epsilon = 1e-12);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
