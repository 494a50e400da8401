//! Two-dimensional state evolution of `(alpha, beta)`, the signal and
//! orthogonal strengths of the iterates.
//!
//! The population recursion is
//!
//! ```text
//! alpha' = {1 + 3 eta [1 - (alpha^2 + beta^2)]} alpha
//! beta'  = {1 +   eta [1 - 3 (alpha^2 + beta^2)]} beta
//! ```
//!
//! and a finite-sample trajectory satisfies the same recursion up to additive
//! perturbations `eta * zeta_t` and `eta * rho_t` inside the braces. All
//! logarithms are natural.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateEvolutionError {
    #[error("cannot invert step {t}: {which} is zero")]
    DegenerateStep { t: usize, which: &'static str },
    #[error("trace is empty")]
    EmptyTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEPoint {
    pub alpha: f64,
    pub beta: f64,
}

impl SEPoint {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    fn norm_sq(&self) -> f64 {
        self.alpha * self.alpha + self.beta * self.beta
    }
}

/// First iterations at which the stage predicates hold; `None` if never.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimes {
    /// First `t` with `alpha_{t+1} >= c6 / log^5 m`.
    pub t0: Option<usize>,
    /// First `t` with `alpha_{t+1} > c4`.
    pub t1: Option<usize>,
    /// First `t` with `|alpha_t - 1| <= gamma / 2` and `beta_t <= gamma / 2`.
    pub t_gamma: Option<usize>,
}

impl StageTimes {
    /// `t0 <= t1 <= t_gamma`, requiring all three to be present.
    pub fn ordered(&self) -> bool {
        matches!((self.t0, self.t1, self.t_gamma), (Some(a), Some(b), Some(c)) if a <= b && b <= c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub gamma: f64,
    pub c4: f64,
    pub c6: f64,
    /// Lower bound for `beta_t` along Stage 1, used only by checks.
    pub c5: f64,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            c4: 0.1,
            c6: 1.0,
            c5: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SETrace {
    pub points: Vec<SEPoint>,
    pub eta: f64,
    /// Empty for population traces.
    pub zetas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub stage_times: Option<StageTimes>,
}

/// One step of the population recursion.
pub fn population_step(p: SEPoint, eta: f64) -> SEPoint {
    let s = p.norm_sq();
    SEPoint {
        alpha: (1.0 + 3.0 * eta * (1.0 - s)) * p.alpha,
        beta: (1.0 + eta * (1.0 - 3.0 * s)) * p.beta,
    }
}

fn in_local_region(p: &SEPoint, gamma: f64) -> bool {
    (p.alpha - 1.0).abs() <= gamma / 2.0 && p.beta <= gamma / 2.0
}

/// Iterate the population recursion until the local-region event or
/// `max_iters` steps. Only `t_gamma` is filled in the stage times.
pub fn population_run(p0: SEPoint, eta: f64, max_iters: usize, gamma: f64) -> SETrace {
    let mut points = vec![p0];
    let mut p = p0;
    let mut t_gamma = None;
    for t in 0..=max_iters {
        if in_local_region(&p, gamma) {
            t_gamma = Some(t);
            break;
        }
        if t == max_iters {
            break;
        }
        p = population_step(p, eta);
        points.push(p);
    }
    SETrace {
        points,
        eta,
        zetas: Vec::new(),
        rhos: Vec::new(),
        stage_times: Some(StageTimes {
            t0: None,
            t1: None,
            t_gamma,
        }),
    }
}

/// Invert the perturbed recursion for `(zeta_t, rho_t)`.
///
/// A `beta_t` of exactly zero ends the trace there (the iterate has reached
/// the signal line) and the returned points are truncated to that index.
/// A zero `alpha_t` at an inverted step is an error.
pub fn extract_perturbations(points: &[SEPoint], eta: f64) -> Result<SETrace, StateEvolutionError> {
    if points.is_empty() {
        return Err(StateEvolutionError::EmptyTrace);
    }
    let end = points
        .iter()
        .position(|p| p.beta == 0.0)
        .unwrap_or(points.len() - 1);
    let mut zetas = Vec::with_capacity(end);
    let mut rhos = Vec::with_capacity(end);
    for t in 0..end {
        let (p, q) = (points[t], points[t + 1]);
        if p.alpha == 0.0 {
            return Err(StateEvolutionError::DegenerateStep { t, which: "alpha" });
        }
        let s = p.norm_sq();
        zetas.push((q.alpha / p.alpha - 1.0 - 3.0 * eta * (1.0 - s)) / eta);
        rhos.push((q.beta / p.beta - 1.0 - eta * (1.0 - 3.0 * s)) / eta);
    }
    Ok(SETrace {
        points: points[..=end].to_vec(),
        eta,
        zetas,
        rhos,
        stage_times: None,
    })
}

/// Regenerate a trace from its first point and perturbations.
pub fn apply_perturbations(p0: SEPoint, eta: f64, zetas: &[f64], rhos: &[f64]) -> Vec<SEPoint> {
    let mut out = vec![p0];
    let mut p = p0;
    for (z, r) in zetas.iter().zip(rhos) {
        let s = p.norm_sq();
        p = SEPoint {
            alpha: (1.0 + 3.0 * eta * (1.0 - s) + eta * z) * p.alpha,
            beta: (1.0 + eta * (1.0 - 3.0 * s) + eta * r) * p.beta,
        };
        out.push(p);
    }
    out
}

/// Stage boundaries of a point sequence, as indices into it.
pub fn stage_times_of_points(points: &[SEPoint], params: &StageParams, m: usize) -> StageTimes {
    let lm = (m.max(2) as f64).ln();
    let t0_threshold = params.c6 / lm.powi(5);
    let first_next = |pred: &dyn Fn(f64) -> bool| {
        points
            .windows(2)
            .position(|w| pred(w[1].alpha))
    };
    StageTimes {
        t0: first_next(&|a| a >= t0_threshold),
        t1: first_next(&|a| a > params.c4),
        t_gamma: points.iter().position(|p| in_local_region(p, params.gamma)),
    }
}

pub fn stage_times(trace: &SETrace, params: &StageParams, m: usize) -> StageTimes {
    stage_times_of_points(&trace.points, params, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fixed_points_are_exact() {
        for p in [
            SEPoint::new(1.0, 0.0),
            SEPoint::new(-1.0, 0.0),
            SEPoint::new(0.0, 0.0),
        ] {
            assert_eq!(population_step(p, 0.1), p);
        }
        let saddle = SEPoint::new(0.0, 1.0 / 3f64.sqrt());
        let q = population_step(saddle, 0.1);
        assert_eq!(q.alpha, 0.0);
        assert!((q.beta - saddle.beta).abs() <= f64::EPSILON);
    }

    #[test]
    fn one_step_value() {
        let q = population_step(SEPoint::new(0.01, 1.0), 0.1);
        assert_relative_eq!(q.alpha, 0.0099997, epsilon = 1e-12);
        assert_relative_eq!(q.beta, 0.79997, epsilon = 1e-12);
    }

    #[test]
    fn zero_alpha_is_invariant() {
        let tr = population_run(SEPoint::new(0.0, 0.5), 0.1, 200, 0.1);
        assert!(tr.points.iter().all(|p| p.alpha == 0.0));
        assert_eq!(tr.stage_times.unwrap().t_gamma, None);
    }

    #[test]
    fn start_in_local_region_terminates_immediately() {
        let tr = population_run(SEPoint::new(1.0, 0.0), 0.1, 100, 0.1);
        assert_eq!(tr.points.len(), 1);
        assert_eq!(tr.stage_times.unwrap().t_gamma, Some(0));
    }

    #[test]
    fn population_trace_has_zero_perturbations() {
        let tr = population_run(SEPoint::new(0.02, 1.0), 0.1, 500, 0.1);
        let ex = extract_perturbations(&tr.points, 0.1).unwrap();
        assert_eq!(ex.zetas.len(), tr.points.len() - 1);
        for (z, r) in ex.zetas.iter().zip(&ex.rhos) {
            assert!(z.abs() < 1e-12 && r.abs() < 1e-12, "{z} {r}");
        }
    }

    #[test]
    fn degenerate_alpha_is_reported() {
        let pts = [SEPoint::new(0.5, 0.5), SEPoint::new(0.0, 0.4), SEPoint::new(0.1, 0.3)];
        assert_eq!(
            extract_perturbations(&pts, 0.1),
            Err(StateEvolutionError::DegenerateStep { t: 1, which: "alpha" })
        );
        assert_eq!(extract_perturbations(&[], 0.1), Err(StateEvolutionError::EmptyTrace));
    }

    #[test]
    fn zero_beta_truncates() {
        let pts = [SEPoint::new(0.5, 0.5), SEPoint::new(0.9, 0.0), SEPoint::new(1.0, 0.0)];
        let ex = extract_perturbations(&pts, 0.1).unwrap();
        assert_eq!(ex.points.len(), 2);
        assert_eq!(ex.zetas.len(), 1);
    }

    #[test]
    fn t1_zero_when_threshold_crossed_at_first_step() {
        let pts = [SEPoint::new(0.09, 1.0), SEPoint::new(0.2, 0.9)];
        let st = stage_times_of_points(&pts, &StageParams::default(), 1000);
        assert_eq!(st.t1, Some(0));
        assert_eq!(st.t0, Some(0));
        assert_eq!(st.t_gamma, None);
    }

    #[test]
    fn ordered_requires_all_present() {
        let st = StageTimes { t0: Some(1), t1: Some(2), t_gamma: None };
        assert!(!st.ordered());
        let st = StageTimes { t0: Some(1), t1: Some(2), t_gamma: Some(2) };
        assert!(st.ordered());
    }
}
