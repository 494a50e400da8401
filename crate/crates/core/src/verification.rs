//! Monte-Carlo checks of the concentration bounds used by the analysis.
//!
//! Every verifier is a pure function of its arguments and seed. Trials draw
//! their design from `trial_stream(trial, ..)`, run in parallel, and are
//! collected in trial order.

use crate::linalg::{self, DenseSymmetric, PowerOptions};
use crate::model::{generate_design, DesignKind, Signal};
use crate::objective::HessianOperator;
use crate::par;
use crate::rng::{self, trial_stream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerificationError {
    #[error("unknown polynomial case {0}; expected 1..=6")]
    UnknownCase(u8),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

mod purpose {
    pub const DESIGN: u64 = 0;
    pub const PROBE: u64 = 1;
    pub const NORM: u64 = 2;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub statistic_name: String,
    pub trials: usize,
    pub observed: Vec<f64>,
    /// Sample size behind each observation, when several are mixed.
    pub m_values: Vec<usize>,
    pub bound: f64,
    pub violation_rate: f64,
    /// Least-squares slope of `log median(observed)` against `log m`.
    pub scaling_slope: Option<f64>,
    /// Trials dropped because the spectral estimate did not converge.
    pub discarded: usize,
}

impl ConcentrationReport {
    fn new(name: &str, observed: Vec<f64>, bound: f64) -> Self {
        let violations = observed.iter().filter(|&&v| v > bound).count();
        let trials = observed.len();
        Self {
            statistic_name: name.to_string(),
            trials,
            violation_rate: if trials == 0 { 0.0 } else { violations as f64 / trials as f64 },
            observed,
            m_values: Vec::new(),
            bound,
            scaling_slope: None,
            discarded: 0,
        }
    }

    pub fn median(&self) -> f64 {
        linalg::median(&self.observed)
    }
}

fn gaussian_rows(n: usize, m: usize, seed: u64, stream_id: u64) -> Vec<f64> {
    rng::gaussian_vec(&mut rng::stream(seed, stream_id), m * n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMaximaReport {
    /// `max_i |a_{i,1}|` against `5 sqrt(log m)`.
    pub first_entry: ConcentrationReport,
    /// `max_i ||a_i||` against `sqrt(6 n)`.
    pub row_norm: ConcentrationReport,
}

pub fn check_design_maxima(n: usize, m: usize, trials: usize, seed: u64) -> Result<DesignMaximaReport, VerificationError> {
    if trials == 0 || n == 0 || m == 0 {
        return Err(VerificationError::InvalidArgument("n, m and trials must be positive".into()));
    }
    let pairs = par::map_range(trials, |k| {
        let rows = gaussian_rows(n, m, seed, trial_stream(k as u64, purpose::DESIGN));
        let mut first = 0.0f64;
        let mut norm = 0.0f64;
        for a in rows.chunks_exact(n) {
            first = first.max(a[0].abs());
            norm = norm.max(linalg::norm(a));
        }
        (first, norm)
    });
    let lm = (m as f64).ln();
    Ok(DesignMaximaReport {
        first_entry: ConcentrationReport::new(
            "max_abs_first_entry",
            pairs.iter().map(|p| p.0).collect(),
            5.0 * lm.sqrt(),
        ),
        row_norm: ConcentrationReport::new("max_row_norm", pairs.iter().map(|p| p.1).collect(), (6.0 * n as f64).sqrt()),
    })
}

/// `1/m sum_i <a_i, s>^2 a_i a_i^T - ||s||^2 I - 2 s s^T` for row-major rows.
pub fn hessian_deviation_matrix(rows: &[f64], n: usize, signal: &[f64]) -> DenseSymmetric {
    let m = rows.len() / n;
    let mut acc = DenseSymmetric::zeros(n);
    for a in rows.chunks_exact(n) {
        let s = linalg::dot(a, signal);
        acc.rank_one_update_upper(s * s, a);
    }
    linalg::scale(1.0 / m as f64, &mut acc.data);
    acc.symmetrize();
    let ss = linalg::dot(signal, signal);
    for i in 0..n {
        for j in 0..n {
            let v = acc.get(i, j) - 2.0 * signal[i] * signal[j] - if i == j { ss } else { 0.0 };
            acc.set(i, j, v);
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianEnvelope {
    /// Constant in `c0 sqrt(n log^3 m / m)`.
    pub c0: f64,
    pub power: PowerOptions,
}

impl Default for HessianEnvelope {
    fn default() -> Self {
        Self {
            c0: 1.0,
            power: PowerOptions {
                tol: 1e-8,
                max_iters: 1000,
                seed: 0,
            },
        }
    }
}

/// Spectral deviation of the weighted Gram matrix from its mean, per trial
/// and per sample size, with the log-log slope of the medians.
///
/// The reported bound is the envelope at the smallest `m`; violations are
/// counted against each observation's own envelope.
pub fn check_hessian_concentration(
    n: usize,
    m_list: &[usize],
    trials: usize,
    seed: u64,
    envelope: HessianEnvelope,
) -> Result<ConcentrationReport, VerificationError> {
    if n == 0 || n > 500 {
        return Err(VerificationError::InvalidArgument(format!("n must be in 1..=500, got {n}")));
    }
    if trials == 0 || m_list.is_empty() || m_list.contains(&0) {
        return Err(VerificationError::InvalidArgument("trials and every m must be positive".into()));
    }
    let mut signal = vec![0.0; n];
    signal[0] = 1.0;
    let env = |m: usize| {
        let lm = (m as f64).ln();
        envelope.c0 * (n as f64 * lm.powi(3) / m as f64).sqrt()
    };
    let jobs: Vec<(usize, usize)> = m_list
        .iter()
        .enumerate()
        .flat_map(|(j, &m)| (0..trials).map(move |k| (m, j * trials + k)))
        .collect();
    let results = par::map(&jobs, |&(m, k)| {
        let rows = gaussian_rows(n, m, seed, trial_stream(k as u64, purpose::DESIGN));
        let dev = hessian_deviation_matrix(&rows, n, &signal);
        linalg::power_iteration(
            &dev,
            PowerOptions {
                seed: seed ^ k as u64,
                ..envelope.power
            },
        )
    });
    let mut observed = Vec::new();
    let mut m_values = Vec::new();
    let mut discarded = 0;
    for ((m, _), r) in jobs.iter().zip(&results) {
        if r.converged {
            observed.push(r.magnitude);
            m_values.push(*m);
        } else {
            discarded += 1;
        }
    }
    let violations = observed.iter().zip(&m_values).filter(|(v, m)| **v > env(**m)).count();
    let mut report = ConcentrationReport::new("hessian_deviation", observed, env(*m_list.iter().min().expect("nonempty")));
    report.violation_rate = if report.trials == 0 { 0.0 } else { violations as f64 / report.trials as f64 };
    report.discarded = discarded;
    if m_list.len() >= 2 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &m in m_list {
            let vals: Vec<f64> = report
                .observed
                .iter()
                .zip(&m_values)
                .filter(|(_, mm)| **mm == m)
                .map(|(v, _)| *v)
                .collect();
            xs.push((m as f64).ln());
            ys.push(linalg::median(&vals).ln());
        }
        report.scaling_slope = Some(linalg::linear_fit(&xs, &ys).1);
    }
    report.m_values = m_values;
    Ok(report)
}

/// `||hess f(z)|| / (10 ||z||^2 + 4)` for random `z` independent of one design.
///
/// Directions are uniform and norms uniform on `norm_range`.
pub fn check_local_smoothness(
    n: usize,
    m: usize,
    z_samples: usize,
    seed: u64,
    norm_range: (f64, f64),
    power: PowerOptions,
) -> Result<ConcentrationReport, VerificationError> {
    if n < 2 || m == 0 || z_samples == 0 {
        return Err(VerificationError::InvalidArgument("need n >= 2, m >= 1, z_samples >= 1".into()));
    }
    let signal = Signal::e1(n).map_err(|e| VerificationError::InvalidArgument(e.to_string()))?;
    let design = generate_design(n, m, DesignKind::Gaussian, &signal, seed, rng::streams::DESIGN)
        .map_err(|e| VerificationError::InvalidArgument(e.to_string()))?;
    let (lo, hi) = norm_range;
    let samples = par::map_range(z_samples, |k| {
        let mut z = rng::gaussian_vec(&mut rng::stream(seed, trial_stream(k as u64, purpose::PROBE)), n);
        let u: f64 = {
            use rand::Rng;
            rng::stream(seed, trial_stream(k as u64, purpose::NORM)).random()
        };
        let target = lo + (hi - lo) * u;
        let nz = linalg::norm(&z);
        linalg::scale(target / nz, &mut z);
        let op = HessianOperator::new(&design, &z).expect("dimensions match");
        let r = linalg::power_iteration(&op, PowerOptions { seed: seed ^ k as u64, ..power });
        (r, 10.0 * target * target + 4.0)
    });
    let mut observed = Vec::new();
    let mut discarded = 0;
    for (r, env) in &samples {
        if r.converged {
            observed.push(r.magnitude / env);
        } else {
            discarded += 1;
        }
    }
    let mut report = ConcentrationReport::new("hessian_norm_over_envelope", observed, 1.0);
    report.discarded = discarded;
    Ok(report)
}

/// The six polynomial sample means, each compared to its Gaussian expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolynomialCase {
    /// `mean a1^3 v` against `0`, scale `||z||`.
    Case1,
    /// `mean a1 v^3` against `0`, scale `||z||^3`.
    Case2,
    /// `mean a1^2 v^2` against `||z||^2`.
    Case3,
    /// `mean a1^6 v^2` against `15 ||z||^2`.
    Case4,
    /// `mean a1^2 v^6` against `15 ||z||^6`.
    Case5,
    /// `mean a1^2 v^4` against `3 ||z||^4`.
    Case6,
}

impl PolynomialCase {
    pub fn from_index(k: u8) -> Result<Self, VerificationError> {
        Ok(match k {
            1 => Self::Case1,
            2 => Self::Case2,
            3 => Self::Case3,
            4 => Self::Case4,
            5 => Self::Case5,
            6 => Self::Case6,
            other => return Err(VerificationError::UnknownCase(other)),
        })
    }

    /// `(power of a1, power of v, expectation constant)`; the normalising
    /// power of `||z||` equals the power of `v`.
    fn shape(self) -> (i32, i32, f64) {
        match self {
            Self::Case1 => (3, 1, 0.0),
            Self::Case2 => (1, 3, 0.0),
            Self::Case3 => (2, 2, 1.0),
            Self::Case4 => (6, 2, 15.0),
            Self::Case5 => (2, 6, 15.0),
            Self::Case6 => (2, 4, 3.0),
        }
    }

    pub fn expectation_constant(self) -> f64 {
        self.shape().2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialStatistic {
    pub mean: f64,
    pub expected: f64,
    /// `|mean - expected|`.
    pub deviation: f64,
    /// `deviation / ||z||^q`; `None` when `z = 0`.
    pub normalized: Option<f64>,
    /// `mean / ||z||^q`; `None` when `z = 0`.
    pub sample_constant: Option<f64>,
}

/// Evaluate one case on row-major rows `a_i = (a_{i,1}, a_{i,perp})` and
/// `z` of length `n - 1`, with `v_i = <a_{i,perp}, z>`.
pub fn polynomial_statistic(case: PolynomialCase, rows: &[f64], n: usize, z: &[f64]) -> PolynomialStatistic {
    let (p1, pv, c) = case.shape();
    let m = rows.len() / n;
    let sum: f64 = rows
        .chunks_exact(n)
        .map(|a| {
            let v = linalg::dot(&a[1..], z);
            a[0].powi(p1) * v.powi(pv)
        })
        .sum();
    let mean = sum / m as f64;
    let scale = linalg::norm(z).powi(pv);
    let expected = c * scale;
    let deviation = (mean - expected).abs();
    let (normalized, sample_constant) = if scale > 0.0 {
        (Some(deviation / scale), Some(mean / scale))
    } else {
        (None, None)
    };
    PolynomialStatistic {
        mean,
        expected,
        deviation,
        normalized,
        sample_constant,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialReport {
    pub case: PolynomialCase,
    /// Normalised deviations against `epsilon`.
    pub report: ConcentrationReport,
    /// `mean / ||z||^q` per trial.
    pub sample_constants: Vec<f64>,
}

/// Pointwise check: a fresh Gaussian `z` per trial, independent of the design.
pub fn check_polynomial_concentration(
    case: u8,
    n: usize,
    m: usize,
    trials: usize,
    seed: u64,
    epsilon: f64,
) -> Result<PolynomialReport, VerificationError> {
    let case = PolynomialCase::from_index(case)?;
    if n < 2 || m == 0 || trials == 0 {
        return Err(VerificationError::InvalidArgument("need n >= 2, m >= 1, trials >= 1".into()));
    }
    let stats = par::map_range(trials, |k| {
        let rows = gaussian_rows(n, m, seed, trial_stream(k as u64, purpose::DESIGN));
        let z = rng::gaussian_vec(&mut rng::stream(seed, trial_stream(k as u64, purpose::PROBE)), n - 1);
        polynomial_statistic(case, &rows, n, &z)
    });
    let observed = stats.iter().filter_map(|s| s.normalized).collect();
    let sample_constants = stats.iter().filter_map(|s| s.sample_constant).collect();
    Ok(PolynomialReport {
        case,
        report: ConcentrationReport::new("polynomial_normalized_deviation", observed, epsilon),
        sample_constants,
    })
}
