//! Leave-one-out and random-sign auxiliary sequences.
//!
//! Alongside the base iterates `x^t` a bundle runs, from the same `x^0` and
//! with the same step size:
//!
//! * `x^{t,(l)}`: gradient descent on the loss without sample `l`;
//! * `x^{t,sgn}`: gradient descent on the design with first entries
//!   `xi_i |a_{i,1}|` for independent signs `xi_i`;
//! * `x^{t,sgn,(l)}`: both modifications at once.
//!
//! The left-out objective keeps the `1/m` normalisation.

use crate::linalg;
use crate::model::{check_len, decompose, flip_first_entry, DesignEnsemble, ModelError, Signal, SignFlipVector};
use crate::objective::{EmpiricalObjective, Evaluation, GradientOracle};
use crate::par;
use crate::rng;
use crate::solver::{self, Descent, RunConfig, Schedule, SolverError, TrajectoryRecord};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub use crate::objective::loo_gradient;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuxiliaryError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("random-sign sequences need the signal to lie on the first axis")]
    UnsupportedConvention,
    #[error("leave-out index {index} out of range for m = {m}")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("bundle was run without snapshots")]
    MissingSnapshots,
}

/// How the random signs for the flipped design are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum FlipSource {
    /// Fair coins from stream `(seed, FLIPS)`.
    Random(u64),
    /// `xi_i = sgn(a_{i,1})`, so the flipped design equals the original.
    Matching,
    Given(SignFlipVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleOptions {
    /// Zero-based sample indices to leave out.
    pub loo_indices: Vec<usize>,
    pub flips: FlipSource,
    /// Keep every iterate of every sequence. Without snapshots only the
    /// online difference curves are available.
    pub keep_snapshots: bool,
}

/// `k` distinct indices out of `0..m`, sorted, drawn from `(seed, LOO_SAMPLE)`.
pub fn sample_indices(m: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, rng::streams::LOO_SAMPLE);
    let mut v = index::sample(&mut r, m, k.min(m)).into_vec();
    v.sort_unstable();
    v
}

/// Per-iteration distances between the base sequence and its auxiliaries.
///
/// Maxima over `l` range over the sampled indices only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurves {
    pub t: Vec<usize>,
    /// `max_l ||x^t - x^{t,(l)}||`
    pub d_loo: Option<Vec<f64>>,
    /// `max_l |x_par^t - x_par^{t,(l)}|`
    pub d_loo_par: Option<Vec<f64>>,
    /// `||x^t - x^{t,sgn}||`
    pub d_sgn: Vec<f64>,
    /// `max_l ||x^t - x^{t,sgn} - x^{t,(l)} + x^{t,sgn,(l)}||`
    pub d_double: Option<Vec<f64>>,
    /// `d_loo / beta_t`
    pub d_loo_over_beta: Option<Vec<f64>>,
    /// `d_loo_par / alpha_t`
    pub d_loo_par_over_alpha: Option<Vec<f64>>,
    /// `d_sgn / alpha_t`
    pub d_sgn_over_alpha: Vec<f64>,
    /// `d_double / alpha_t`
    pub d_double_over_alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct DiffRow {
    d_loo: f64,
    d_loo_par: f64,
    d_sgn: f64,
    d_double: f64,
}

fn diff_row(base: &[f64], sgn: &[f64], loo: &[&[f64]], sgn_loo: &[&[f64]]) -> DiffRow {
    let d_sgn = linalg::norm(&linalg::sub(base, sgn));
    let mut row = DiffRow {
        d_loo: 0.0,
        d_loo_par: 0.0,
        d_sgn,
        d_double: 0.0,
    };
    for (xl, xsl) in loo.iter().zip(sgn_loo) {
        row.d_loo = row.d_loo.max(linalg::norm(&linalg::sub(base, xl)));
        row.d_loo_par = row.d_loo_par.max((base[0] - xl[0]).abs());
        let mut dd = 0.0;
        for j in 0..base.len() {
            let v = base[j] - sgn[j] - xl[j] + xsl[j];
            dd += v * v;
        }
        row.d_double = row.d_double.max(dd.sqrt());
    }
    row
}

fn assemble_curves(t: Vec<usize>, rows: &[DiffRow], alphas: &[f64], betas: &[f64], with_loo: bool) -> DifferenceCurves {
    let col = |f: fn(&DiffRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let over = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| a / b).collect::<Vec<f64>>();
    let d_sgn = col(|r| r.d_sgn);
    let d_sgn_over_alpha = over(&d_sgn, alphas);
    if !with_loo {
        return DifferenceCurves {
            t,
            d_sgn,
            d_sgn_over_alpha,
            ..Default::default()
        };
    }
    let d_loo = col(|r| r.d_loo);
    let d_loo_par = col(|r| r.d_loo_par);
    let d_double = col(|r| r.d_double);
    DifferenceCurves {
        t,
        d_loo_over_beta: Some(over(&d_loo, betas)),
        d_loo_par_over_alpha: Some(over(&d_loo_par, alphas)),
        d_double_over_alpha: Some(over(&d_double, alphas)),
        d_loo: Some(d_loo),
        d_loo_par: Some(d_loo_par),
        d_double: Some(d_double),
        d_sgn,
        d_sgn_over_alpha,
    }
}

/// Base sequence plus its auxiliaries, advanced in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryBundle {
    pub base: TrajectoryRecord,
    pub loo_indices: Vec<usize>,
    /// Snapshots of `x^{t,(l)}` keyed by `l`, aligned with `base.records`.
    pub loo: BTreeMap<usize, Vec<Vec<f64>>>,
    pub sgn: Vec<Vec<f64>>,
    pub sgn_loo: BTreeMap<usize, Vec<Vec<f64>>>,
    pub flips: SignFlipVector,
    pub eta: f64,
    /// Computed during the run, available with or without snapshots.
    pub curves: DifferenceCurves,
}

enum Role {
    Base,
    Loo(usize),
    Sgn,
    SgnLoo(usize),
}

/// Run all sequences from `x0` until each is within `config.tol` or
/// `config.max_iters` is reached.
pub fn run_bundle(
    config: &RunConfig,
    design: &DesignEnsemble,
    signal: &Signal,
    x0: Vec<f64>,
    options: &BundleOptions,
) -> Result<AuxiliaryBundle, AuxiliaryError> {
    config.validate()?;
    check_len(design.n(), x0.len())?;
    check_len(signal.len(), x0.len())?;
    if signal.entries()[1..].iter().any(|&v| v != 0.0) {
        return Err(AuxiliaryError::UnsupportedConvention);
    }
    for &l in &options.loo_indices {
        if l >= design.m() {
            return Err(AuxiliaryError::IndexOutOfRange { index: l, m: design.m() });
        }
    }
    let flips = match &options.flips {
        FlipSource::Random(seed) => SignFlipVector::random(design.m(), *seed),
        FlipSource::Matching => SignFlipVector::matching(design),
        FlipSource::Given(f) => f.clone(),
    };
    let sgn_design = flip_first_entry(design, &flips)?;

    let mut roles = vec![Role::Base];
    let mut seqs = vec![Descent::new(EmpiricalObjective::new(design), x0.clone(), "base")];
    for &l in &options.loo_indices {
        roles.push(Role::Loo(l));
        seqs.push(Descent::new(EmpiricalObjective::leaving_out(design, l), x0.clone(), format!("loo({l})")));
    }
    roles.push(Role::Sgn);
    seqs.push(Descent::new(EmpiricalObjective::new(&sgn_design), x0.clone(), "sgn"));
    for &l in &options.loo_indices {
        roles.push(Role::SgnLoo(l));
        seqs.push(Descent::new(
            EmpiricalObjective::leaving_out(&sgn_design, l),
            x0.clone(),
            format!("sgn_loo({l})"),
        ));
    }
    let k = options.loo_indices.len();
    let sgn_pos = 1 + k;

    let mut sched = Schedule::from(config);
    sched.diagnostics.snapshots = options.keep_snapshots;
    let bound = solver::norm_bound(signal, sched.divergence_factor);

    let mut base = TrajectoryRecord::default();
    let mut loo: BTreeMap<usize, Vec<Vec<f64>>> = options.loo_indices.iter().map(|&l| (l, Vec::new())).collect();
    let mut sgn = Vec::new();
    let mut sgn_loo: BTreeMap<usize, Vec<Vec<f64>>> = options.loo_indices.iter().map(|&l| (l, Vec::new())).collect();
    let mut rows = Vec::new();
    let mut ts = Vec::new();
    let mut t = 0;
    loop {
        let evals: Vec<Evaluation> = par::map(&seqs, |s| s.oracle.evaluate(&s.x));
        let dists: Vec<f64> = seqs.iter().map(|s| solver::relative_dist(&s.x, signal)).collect();
        let converged = dists.iter().all(|&d| d <= sched.tol);
        let last = converged || t == sched.max_iters;
        if t % sched.record_every == 0 || last {
            base.records.push(solver::make_record(
                t,
                &seqs[0].x,
                &evals[0],
                signal,
                Some(design),
                sched.diagnostics,
                dists[0],
            ));
            let loo_x: Vec<&[f64]> = seqs[1..sgn_pos].iter().map(|s| s.x.as_slice()).collect();
            let sgn_loo_x: Vec<&[f64]> = seqs[sgn_pos + 1..].iter().map(|s| s.x.as_slice()).collect();
            rows.push(diff_row(&seqs[0].x, &seqs[sgn_pos].x, &loo_x, &sgn_loo_x));
            ts.push(t);
            if options.keep_snapshots {
                for (role, s) in roles.iter().zip(&seqs) {
                    match role {
                        Role::Base => {}
                        Role::Loo(l) => loo.get_mut(l).expect("index registered").push(s.x.clone()),
                        Role::Sgn => sgn.push(s.x.clone()),
                        Role::SgnLoo(l) => sgn_loo.get_mut(l).expect("index registered").push(s.x.clone()),
                    }
                }
            }
        }
        if last {
            base.converged = dists[0] <= sched.tol;
            base.iterations_run = t;
            break;
        }
        for (s, e) in seqs.iter_mut().zip(&evals) {
            s.advance(&e.gradient, sched.eta, bound, t)?;
        }
        t += 1;
    }
    base.fill_stage_times(&config.stage, design.m());
    let alphas: Vec<f64> = base.records.iter().map(|r| r.alpha).collect();
    let betas: Vec<f64> = base.records.iter().map(|r| r.beta).collect();
    let curves = assemble_curves(ts, &rows, &alphas, &betas, k > 0);
    Ok(AuxiliaryBundle {
        base,
        loo_indices: options.loo_indices.clone(),
        loo,
        sgn,
        sgn_loo,
        flips,
        eta: config.eta,
        curves,
    })
}

/// Recompute the difference curves from a bundle's snapshots.
pub fn difference_curves(bundle: &AuxiliaryBundle, signal: &Signal) -> Result<DifferenceCurves, AuxiliaryError> {
    let steps = bundle.base.records.len();
    if bundle.sgn.len() != steps || bundle.base.records.iter().any(|r| r.snapshot.is_none()) {
        return Err(AuxiliaryError::MissingSnapshots);
    }
    let mut rows = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas = Vec::with_capacity(steps);
    for (k, rec) in bundle.base.records.iter().enumerate() {
        let x = rec.snapshot.as_deref().expect("checked above");
        let dec = decompose(x, signal)?;
        alphas.push(dec.parallel.abs());
        betas.push(dec.orthogonal_norm);
        let loo_x: Vec<&[f64]> = bundle.loo.values().map(|v| v[k].as_slice()).collect();
        let sgn_loo_x: Vec<&[f64]> = bundle.sgn_loo.values().map(|v| v[k].as_slice()).collect();
        rows.push(diff_row(x, &bundle.sgn[k], &loo_x, &sgn_loo_x));
    }
    let t = bundle.base.records.iter().map(|r| r.t).collect();
    Ok(assemble_curves(t, &rows, &alphas, &betas, !bundle.loo_indices.is_empty()))
}

/// `max_i |<a_i, x^t>| / ||x^t||` for each snapshot; `None` flags a zero iterate.
pub fn incoherence_profile(design: &DesignEnsemble, snapshots: &[Vec<f64>]) -> Result<Vec<Option<f64>>, AuxiliaryError> {
    for x in snapshots {
        check_len(design.n(), x.len())?;
    }
    Ok(par::map(snapshots, |x| {
        let nx = linalg::norm(x);
        if nx == 0.0 {
            return None;
        }
        let mx = (0..design.m())
            .map(|i| linalg::dot(design.row(i), x).abs())
            .fold(0.0f64, f64::max);
        Some(mx / nx)
    }))
}
