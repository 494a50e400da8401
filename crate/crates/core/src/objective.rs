//! Quartic least-squares loss for phase retrieval and the quantities derived
//! from it: gradient, Hessian, population gradient and fluctuation terms.
//!
//! With `s_i = <a_i, x>`,
//!
//! ```text
//! f(x)     = 1/(4m) sum_i (s_i^2 - y_i)^2
//! grad f   = 1/m    sum_i (s_i^2 - y_i) s_i a_i
//! hess f   = 1/m    sum_i (3 s_i^2 - y_i) a_i a_i^T
//! grad F   = (3||x||^2 - ||x*||^2) x - 2 <x*, x> x*
//! ```
//!
//! Row sums are accumulated in fixed chunks that are reduced in chunk order,
//! so results do not depend on how many threads evaluate the chunks.

use crate::linalg::{self, DenseSymmetric, SymmetricOperator};
use crate::model::{check_len, DesignEnsemble, ModelError, Signal};
use crate::par;
use thiserror::Error;

const ROW_CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("residual terms need the signal to be exactly e_1")]
    UnsupportedConvention,
}

/// Loss, gradient and incoherence at one point, computed in a single sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// `max_i |<a_i, x>|`; `None` for the population objective.
    pub max_abs_projection: Option<f64>,
}

struct Partial {
    loss: f64,
    grad: Vec<f64>,
    max_abs: f64,
}

/// Single pass over the rows; `skip` drops one row as if it were not there.
/// The skipped row is never read.
fn sweep(design: &DesignEnsemble, x: &[f64], skip: Option<usize>) -> Evaluation {
    let n = design.n();
    let m = design.m();
    let y = design.measurements();
    let partials = par::map_chunks(design.rows(), ROW_CHUNK * n, |k, rows| {
        let base = k * ROW_CHUNK;
        let mut p = Partial {
            loss: 0.0,
            grad: vec![0.0; n],
            max_abs: 0.0,
        };
        for (j, a) in rows.chunks_exact(n).enumerate() {
            let i = base + j;
            if skip == Some(i) {
                continue;
            }
            let s = linalg::dot(a, x);
            let resid = s * s - y[i];
            p.loss += resid * resid;
            p.max_abs = p.max_abs.max(s.abs());
            linalg::axpy(resid * s, a, &mut p.grad);
        }
        p
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut max_abs = 0.0f64;
    for p in &partials {
        loss += p.loss;
        max_abs = max_abs.max(p.max_abs);
        linalg::axpy(1.0, &p.grad, &mut grad);
    }
    let inv_m = 1.0 / m as f64;
    linalg::scale(inv_m, &mut grad);
    Evaluation {
        loss: 0.25 * inv_m * loss,
        gradient: grad,
        max_abs_projection: Some(max_abs),
    }
}

/// Anything gradient descent can be run on.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Evaluation;
}

/// The empirical loss, optionally with one sample left out.
///
/// Leaving sample `l` out keeps the `1/m` normalisation, so the result is the
/// full gradient minus the `l`-th summand divided by `m`.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalObjective<'a> {
    pub design: &'a DesignEnsemble,
    pub leave_out: Option<usize>,
}

impl<'a> EmpiricalObjective<'a> {
    pub fn new(design: &'a DesignEnsemble) -> Self {
        Self {
            design,
            leave_out: None,
        }
    }

    pub fn leaving_out(design: &'a DesignEnsemble, l: usize) -> Self {
        Self {
            design,
            leave_out: Some(l),
        }
    }
}

impl GradientOracle for EmpiricalObjective<'_> {
    fn dim(&self) -> usize {
        self.design.n()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        sweep(self.design, x, self.leave_out)
    }
}

/// The expected loss under a standard Gaussian design.
#[derive(Debug, Clone)]
pub struct PopulationObjective<'a> {
    pub signal: &'a Signal,
}

impl GradientOracle for PopulationObjective<'_> {
    fn dim(&self) -> usize {
        self.signal.len()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        Evaluation {
            loss: population_loss_unchecked(x, self.signal),
            gradient: population_gradient_unchecked(x, self.signal),
            max_abs_projection: None,
        }
    }
}

pub fn loss(design: &DesignEnsemble, x: &[f64]) -> Result<f64, ObjectiveError> {
    check_len(design.n(), x.len())?;
    Ok(sweep(design, x, None).loss)
}

pub fn gradient(design: &DesignEnsemble, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    check_len(design.n(), x.len())?;
    Ok(sweep(design, x, None).gradient)
}

/// Gradient of the loss with sample `l` (zero-based) removed.
pub fn loo_gradient(design: &DesignEnsemble, x: &[f64], l: usize) -> Result<Vec<f64>, ObjectiveError> {
    check_len(design.n(), x.len())?;
    if l >= design.m() {
        return Err(ModelError::InvalidArgument(format!(
            "leave-out index {l} out of range for m = {}",
            design.m()
        ))
        .into());
    }
    Ok(sweep(design, x, Some(l)).gradient)
}

fn hessian_weights(design: &DesignEnsemble, x: &[f64]) -> Vec<f64> {
    let y = design.measurements();
    (0..design.m())
        .map(|i| {
            let s = linalg::dot(design.row(i), x);
            3.0 * s * s - y[i]
        })
        .collect()
}

/// Dense Hessian. Costs `O(m n^2)`; meant for moderate `n`.
pub fn hessian(design: &DesignEnsemble, x: &[f64]) -> Result<DenseSymmetric, ObjectiveError> {
    check_len(design.n(), x.len())?;
    let w = hessian_weights(design, x);
    Ok(weighted_gram(design, &w))
}

/// `1/m sum_i w_i a_i a_i^T` as a dense matrix.
pub fn weighted_gram(design: &DesignEnsemble, weights: &[f64]) -> DenseSymmetric {
    let n = design.n();
    let partials = par::map_chunks(design.rows(), ROW_CHUNK * n, |k, rows| {
        let mut acc = DenseSymmetric::zeros(n);
        for (j, a) in rows.chunks_exact(n).enumerate() {
            acc.rank_one_update_upper(weights[k * ROW_CHUNK + j], a);
        }
        acc
    });
    let mut out = DenseSymmetric::zeros(n);
    for p in &partials {
        out.add_scaled(1.0, p);
    }
    linalg::scale(1.0 / design.m() as f64, &mut out.data);
    out.symmetrize();
    out
}

/// Matrix-free Hessian `v -> 1/m sum_i w_i <a_i, v> a_i`.
#[derive(Debug, Clone)]
pub struct HessianOperator<'a> {
    design: &'a DesignEnsemble,
    weights: Vec<f64>,
}

impl<'a> HessianOperator<'a> {
    pub fn new(design: &'a DesignEnsemble, x: &[f64]) -> Result<Self, ObjectiveError> {
        check_len(design.n(), x.len())?;
        Ok(Self {
            design,
            weights: hessian_weights(design, x),
        })
    }
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.design.n()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.design.n();
        let partials = par::map_chunks(self.design.rows(), ROW_CHUNK * n, |k, rows| {
            let mut acc = vec![0.0; n];
            for (j, a) in rows.chunks_exact(n).enumerate() {
                let c = self.weights[k * ROW_CHUNK + j] * linalg::dot(a, v);
                linalg::axpy(c, a, &mut acc);
            }
            acc
        });
        out.iter_mut().for_each(|o| *o = 0.0);
        for p in &partials {
            linalg::axpy(1.0, p, out);
        }
        linalg::scale(1.0 / self.design.m() as f64, out);
    }
}

fn population_gradient_unchecked(x: &[f64], signal: &Signal) -> Vec<f64> {
    let s = signal.entries();
    let xx = linalg::dot(x, x);
    let ss = signal.norm() * signal.norm();
    let sx = linalg::dot(s, x);
    let c = 3.0 * xx - ss;
    x.iter().zip(s).map(|(xi, si)| c * xi - 2.0 * sx * si).collect()
}

fn population_loss_unchecked(x: &[f64], signal: &Signal) -> f64 {
    let xx = linalg::dot(x, x);
    let ss = signal.norm() * signal.norm();
    let sx = linalg::dot(signal.entries(), x);
    0.25 * (3.0 * xx * xx + 3.0 * ss * ss - 2.0 * xx * ss - 4.0 * sx * sx)
}

/// `(3||x||^2 - ||x*||^2) x - 2 <x*, x> x*`.
pub fn population_gradient(x: &[f64], signal: &Signal) -> Result<Vec<f64>, ObjectiveError> {
    check_len(signal.len(), x.len())?;
    Ok(population_gradient_unchecked(x, signal))
}

/// Expected loss under a standard Gaussian design.
pub fn population_loss(x: &[f64], signal: &Signal) -> Result<f64, ObjectiveError> {
    check_len(signal.len(), x.len())?;
    Ok(population_loss_unchecked(x, signal))
}

/// The four sample-average terms whose signed combination is `r1`.
///
/// Signs are chosen so that `r1 = i1 + i2 - i3 - i4` holds exactly, where
/// `r1` is the first coordinate of `grad f - grad F`:
///
/// ```text
/// i1 = -(1 - x1^2) x1 (mean a1^4 - 3)
/// i2 = -(1 - 3 x1^2)  mean a1^3 <a_perp, x_perp>
/// i3 = -3 x1 (mean a1^2 <a_perp, x_perp>^2 - ||x_perp||^2)
/// i4 = -mean a1 <a_perp, x_perp>^3
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTerms {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
}

impl ResidualTerms {
    pub fn combined(&self) -> f64 {
        self.i1 + self.i2 - self.i3 - self.i4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBreakdown {
    /// Present only in the `e_1` frame.
    pub terms: Option<ResidualTerms>,
    /// Signal-direction coordinate of the fluctuation.
    pub r1: f64,
    pub fluctuation: Vec<f64>,
    pub fluctuation_norm: f64,
}

/// `r(x) = grad f(x) - grad F(x)` and, in the `e_1` frame, its `r1` breakdown.
pub fn fluctuation(
    design: &DesignEnsemble,
    x: &[f64],
    signal: &Signal,
) -> Result<ResidualBreakdown, ObjectiveError> {
    check_len(design.n(), x.len())?;
    check_len(signal.len(), x.len())?;
    let g = sweep(design, x, None).gradient;
    let pg = population_gradient_unchecked(x, signal);
    let fluct = linalg::sub(&g, &pg);
    let u = signal.direction()?;
    let r1 = linalg::dot(&fluct, &u);
    let terms = if signal.is_unit_first_axis() {
        Some(residual_terms(design, x, signal)?)
    } else {
        None
    };
    Ok(ResidualBreakdown {
        terms,
        r1,
        fluctuation_norm: linalg::norm(&fluct),
        fluctuation: fluct,
    })
}

/// The `i1..i4` terms; requires the signal to be exactly `e_1`.
pub fn residual_terms(
    design: &DesignEnsemble,
    x: &[f64],
    signal: &Signal,
) -> Result<ResidualTerms, ObjectiveError> {
    check_len(design.n(), x.len())?;
    check_len(signal.len(), x.len())?;
    if !signal.is_unit_first_axis() {
        return Err(ObjectiveError::UnsupportedConvention);
    }
    let x1 = x[0];
    let xp = &x[1..];
    let beta2 = linalg::dot(xp, xp);
    let (mut s4, mut s3, mut s22, mut s13) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..design.m() {
        let a = design.row(i);
        let a1 = a[0];
        let v = linalg::dot(&a[1..], xp);
        let a1sq = a1 * a1;
        s4 += a1sq * a1sq;
        s3 += a1sq * a1 * v;
        s22 += a1sq * v * v;
        s13 += a1 * v * v * v;
    }
    let inv_m = 1.0 / design.m() as f64;
    let (s4, s3, s22, s13) = (s4 * inv_m, s3 * inv_m, s22 * inv_m, s13 * inv_m);
    Ok(ResidualTerms {
        i1: -(1.0 - x1 * x1) * x1 * (s4 - 3.0),
        i2: -(1.0 - 3.0 * x1 * x1) * s3,
        i3: -3.0 * x1 * (s22 - beta2),
        i4: -s13,
    })
}
