//! Vanilla gradient descent `x <- x - eta * grad f(x)` with diagnostics.

use crate::linalg::{self, PowerOptions};
use crate::model::{check_len, decompose, DesignEnsemble, DesignKind, ModelError, Signal};
use crate::objective::{self, EmpiricalObjective, GradientOracle, HessianOperator, PopulationObjective};
use crate::rng;
use crate::state_evolution::{self, SEPoint, StageParams, StageTimes};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{sequence} sequence diverged after iteration {last_finite}; the step size is likely too large")]
    Diverged { sequence: String, last_finite: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `x0 ~ N(0, ||x*||^2 / n I)`.
    GaussianRandom,
    /// `x0 = sqrt(mean y) * u` with `u` uniform on the sphere.
    DataDependent,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub incoherence: bool,
    pub residuals: bool,
    pub hessian_norm: bool,
    pub snapshots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `dist / ||x*||` is at most this.
    pub tol: f64,
    pub design_kind: DesignKind,
    pub init_mode: InitMode,
    pub seed: u64,
    pub record_every: usize,
    pub diagnostics: Diagnostics,
    /// Abort when `||x|| > divergence_factor * ||x*||`.
    pub divergence_factor: f64,
    pub stage: StageParams,
}

impl RunConfig {
    /// `m = 10 n`, `eta = 0.1`, 500 iterations, tolerance `1e-5`, Gaussian
    /// design and Gaussian random initialisation.
    pub fn standard(n: usize, seed: u64) -> Self {
        Self {
            n,
            m: 10 * n,
            eta: 0.1,
            max_iters: 500,
            tol: 1e-5,
            design_kind: DesignKind::Gaussian,
            init_mode: InitMode::GaussianRandom,
            seed,
            record_every: 1,
            diagnostics: Diagnostics {
                incoherence: true,
                ..Diagnostics::default()
            },
            divergence_factor: 10.0,
            stage: StageParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.m < 1 {
            return bad("m must be positive".into());
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta must be a finite nonnegative number, got {}", self.eta));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad(format!("tol must be nonnegative, got {}", self.tol));
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        if self.divergence_factor.is_nan() || self.divergence_factor <= 0.0 {
            return bad("divergence_factor must be positive".into());
        }
        if let InitMode::Fixed(x0) = &self.init_mode {
            if x0.len() != self.n {
                return bad(format!("fixed initial point has length {}, expected {}", x0.len(), self.n));
            }
        }
        Ok(())
    }
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// `dist(x, x*) / ||x*||`.
    pub dist_rel: f64,
    /// `|<x, x*>| / ||x*||`.
    pub alpha: f64,
    pub beta: f64,
    /// `alpha / beta`, infinite when `beta = 0`.
    pub ratio: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// `max_i |<a_i, x>| / ||x||`.
    pub incoherence: Option<f64>,
    pub r1_abs: Option<f64>,
    pub hessian_norm: Option<f64>,
    #[serde(skip)]
    pub snapshot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub records: Vec<IterationRecord>,
    pub iterations_run: usize,
    pub converged: bool,
    pub stage_times: Option<StageTimes>,
}

impl TrajectoryRecord {
    pub fn points(&self) -> Vec<SEPoint> {
        self.records
            .iter()
            .map(|r| SEPoint {
                alpha: r.alpha,
                beta: r.beta,
            })
            .collect()
    }

    pub fn dists(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dist_rel).collect()
    }

    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Compute stage times on the recorded points and map them back to
    /// iteration counts.
    pub fn fill_stage_times(&mut self, params: &StageParams, m: usize) {
        if self.records.is_empty() {
            return;
        }
        let idx = state_evolution::stage_times_of_points(&self.points(), params, m);
        let to_t = |k: Option<usize>| k.map(|k| self.records[k].t);
        self.stage_times = Some(StageTimes {
            t0: to_t(idx.t0),
            t1: to_t(idx.t1),
            t_gamma: to_t(idx.t_gamma),
        });
    }
}

/// `min(||x - x*||, ||x + x*||)`.
pub fn dist(x: &[f64], signal: &Signal) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (xi, si) in x.iter().zip(signal.entries()) {
        minus += (xi - si) * (xi - si);
        plus += (xi + si) * (xi + si);
    }
    minus.min(plus).sqrt()
}

/// Entries i.i.d. `N(0, signal_norm^2 / n)`.
pub fn random_init(n: usize, signal_norm: f64, seed: u64) -> Vec<f64> {
    let mut x = rng::gaussian_vec(&mut rng::stream(seed, rng::streams::INIT), n);
    linalg::scale(signal_norm / (n as f64).sqrt(), &mut x);
    x
}

/// `sqrt(mean y) * u` with `u` uniform on the unit sphere.
pub fn data_dependent_init(design: &DesignEnsemble, seed: u64) -> Vec<f64> {
    let n = design.n();
    let mut u = rng::gaussian_vec(&mut rng::stream(seed, rng::streams::DIRECTION), n);
    let nu = linalg::norm(&u);
    let y = design.measurements();
    let radius = (y.iter().sum::<f64>() / y.len() as f64).sqrt();
    linalg::scale(radius / nu, &mut u);
    u
}

/// Signal used by the experiment runners for a design kind.
///
/// Gaussian designs are rotation invariant, so `e_1` loses nothing. Under a
/// +-1 design an axis-aligned signal gives `y_i = 1` for every sample and
/// every other axis fits equally well, so Rademacher runs draw a uniform
/// unit direction instead.
pub fn default_signal(n: usize, kind: DesignKind, seed: u64) -> Result<Signal, ModelError> {
    match kind {
        DesignKind::Gaussian => Signal::e1(n),
        DesignKind::Rademacher => Signal::random_unit(n, seed),
    }
}

/// The starting point requested by `config`.
pub fn initial_point(config: &RunConfig, design: &DesignEnsemble, signal: &Signal) -> Vec<f64> {
    match &config.init_mode {
        InitMode::GaussianRandom => random_init(config.n, signal.norm(), config.seed),
        InitMode::DataDependent => data_dependent_init(design, config.seed),
        InitMode::Fixed(x0) => x0.clone(),
    }
}

/// Per-iteration settings shared by every driver.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Schedule {
    pub eta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub record_every: usize,
    pub diagnostics: Diagnostics,
    pub divergence_factor: f64,
}

impl From<&RunConfig> for Schedule {
    fn from(c: &RunConfig) -> Self {
        Self {
            eta: c.eta,
            max_iters: c.max_iters,
            tol: c.tol,
            record_every: c.record_every,
            diagnostics: c.diagnostics,
            divergence_factor: c.divergence_factor,
        }
    }
}

/// One gradient-descent sequence, advanced a step at a time.
pub(crate) struct Descent<O> {
    pub oracle: O,
    pub x: Vec<f64>,
    pub name: String,
}

impl<O: GradientOracle> Descent<O> {
    pub fn new(oracle: O, x0: Vec<f64>, name: impl Into<String>) -> Self {
        Self {
            oracle,
            x: x0,
            name: name.into(),
        }
    }

    /// Apply `x <- x - eta g` and guard against blow-up.
    pub fn advance(
        &mut self,
        gradient: &[f64],
        eta: f64,
        bound: f64,
        t: usize,
    ) -> Result<(), SolverError> {
        linalg::axpy(-eta, gradient, &mut self.x);
        let nx = linalg::norm(&self.x);
        if !nx.is_finite() || nx > bound {
            return Err(SolverError::Diverged {
                sequence: self.name.clone(),
                last_finite: t,
            });
        }
        Ok(())
    }
}

pub(crate) fn norm_bound(signal: &Signal, factor: f64) -> f64 {
    if signal.norm() > 0.0 {
        factor * signal.norm()
    } else {
        f64::INFINITY
    }
}

pub(crate) fn relative_dist(x: &[f64], signal: &Signal) -> f64 {
    let d = dist(x, signal);
    if signal.norm() > 0.0 {
        d / signal.norm()
    } else {
        d
    }
}

/// Build the diagnostics row for iterate `x` with evaluation `eval`.
pub(crate) fn make_record(
    t: usize,
    x: &[f64],
    eval: &objective::Evaluation,
    signal: &Signal,
    design: Option<&DesignEnsemble>,
    diagnostics: Diagnostics,
    dist_rel: f64,
) -> IterationRecord {
    let dec = decompose(x, signal).expect("lengths checked by caller");
    let alpha = dec.parallel.abs();
    let beta = dec.orthogonal_norm;
    let nx = linalg::norm(x);
    let incoherence = match (diagnostics.incoherence, eval.max_abs_projection) {
        (true, Some(mx)) if nx > 0.0 => Some(mx / nx),
        _ => None,
    };
    let r1_abs = if diagnostics.residuals {
        objective::population_gradient(x, signal).ok().and_then(|pg| {
            let u = signal.direction().ok()?;
            Some(linalg::dot(&linalg::sub(&eval.gradient, &pg), &u).abs())
        })
    } else {
        None
    };
    let hessian_norm = match (diagnostics.hessian_norm, design) {
        (true, Some(d)) => HessianOperator::new(d, x).ok().map(|op| {
            linalg::power_iteration(&op, PowerOptions { seed: t as u64, ..Default::default() }).magnitude
        }),
        _ => None,
    };
    IterationRecord {
        t,
        dist_rel,
        alpha,
        beta,
        ratio: alpha / beta,
        loss: eval.loss,
        grad_norm: linalg::norm(&eval.gradient),
        incoherence,
        r1_abs,
        hessian_norm,
        snapshot: diagnostics.snapshots.then(|| x.to_vec()),
    }
}

fn drive<O: GradientOracle>(
    oracle: O,
    design: Option<&DesignEnsemble>,
    signal: &Signal,
    x0: Vec<f64>,
    sched: Schedule,
    name: &str,
) -> Result<TrajectoryRecord, SolverError> {
    check_len(signal.len(), x0.len())?;
    check_len(oracle.dim(), x0.len())?;
    if !linalg::is_finite(&x0) {
        return Err(SolverError::InvalidConfig("initial point is not finite".into()));
    }
    let bound = norm_bound(signal, sched.divergence_factor);
    let mut seq = Descent::new(oracle, x0, name);
    let mut out = TrajectoryRecord::default();
    let mut t = 0;
    loop {
        let eval = seq.oracle.evaluate(&seq.x);
        let dist_rel = relative_dist(&seq.x, signal);
        let converged = dist_rel <= sched.tol;
        let last = converged || t == sched.max_iters;
        if t % sched.record_every == 0 || last {
            out.records.push(make_record(t, &seq.x, &eval, signal, design, sched.diagnostics, dist_rel));
        }
        if last {
            out.converged = converged;
            out.iterations_run = t;
            return Ok(out);
        }
        seq.advance(&eval.gradient, sched.eta, bound, t)?;
        t += 1;
    }
}

/// Run gradient descent on the empirical loss from `x0`.
pub fn run(
    config: &RunConfig,
    design: &DesignEnsemble,
    signal: &Signal,
    x0: Vec<f64>,
) -> Result<TrajectoryRecord, SolverError> {
    config.validate()?;
    check_len(config.n, design.n())?;
    let mut rec = drive(
        EmpiricalObjective::new(design),
        Some(design),
        signal,
        x0,
        Schedule::from(config),
        "base",
    )?;
    rec.fill_stage_times(&config.stage, design.m());
    Ok(rec)
}

/// Gradient descent on the population loss.
pub fn run_population(
    x0: Vec<f64>,
    signal: &Signal,
    eta: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TrajectoryRecord, SolverError> {
    let sched = Schedule {
        eta,
        max_iters,
        tol,
        record_every: 1,
        diagnostics: Diagnostics::default(),
        divergence_factor: 10.0,
    };
    drive(PopulationObjective { signal }, None, signal, x0, sched, "population")
}

/// Population run with explicit recording options.
pub fn run_population_with(
    config: &RunConfig,
    signal: &Signal,
    x0: Vec<f64>,
) -> Result<TrajectoryRecord, SolverError> {
    config.validate()?;
    let mut rec = drive(
        PopulationObjective { signal },
        None,
        signal,
        x0,
        Schedule::from(config),
        "population",
    )?;
    rec.fill_stage_times(&config.stage, config.m);
    Ok(rec)
}
