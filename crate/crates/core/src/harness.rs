//! Experiment orchestration and persistence.
//!
//! Each run writes one CSV trace plus a JSON sidecar holding the resolved
//! configuration; each experiment writes a `manifest.json` listing its
//! outputs in sorted order. Every CSV carries the same header, with empty
//! cells for quantities a run does not produce.

pub mod cli;

use crate::auxiliary::{self, BundleOptions, DifferenceCurves, FlipSource};
use crate::model::{generate_design, DesignKind, Signal};
use crate::par;
use crate::solver::{self, InitMode, RunConfig, TrajectoryRecord};
use crate::state_evolution::{self, SEPoint, StageTimes};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: [&str; 12] = [
    "t",
    "dist_rel",
    "alpha",
    "beta",
    "ratio",
    "loss",
    "grad_norm",
    "incoherence",
    "d_loo",
    "d_loo_par",
    "d_sgn",
    "d_double",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    Fig1,
    Fig2a,
    Fig2b,
    Fig3a,
    Fig3b,
    Population,
    Fig4a,
    Fig4b,
    Fig5,
    Custom,
}

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2a => "fig2a",
            Self::Fig2b => "fig2b",
            Self::Fig3a => "fig3a",
            Self::Fig3b => "fig3b",
            Self::Population => "population",
            Self::Fig4a => "fig4a",
            Self::Fig4b => "fig4b",
            Self::Fig5 => "fig5",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitChoice {
    Random,
    Data,
    Fixed,
}

/// Settings that replace a figure's defaults when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub eta: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub design_kind: Option<DesignKind>,
    pub init: Option<InitChoice>,
    pub x0: Option<Vec<f64>>,
    pub record_every: Option<usize>,
    pub loo_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub figure_id: FigureId,
    pub overrides: Overrides,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobKind {
    /// Gradient descent on the empirical loss.
    Empirical,
    /// Gradient descent on the population loss.
    PopulationVector,
    /// Scalar population recursion from `(1/sqrt(n log n), 1)`.
    PopulationScalar,
    /// Base plus auxiliary sequences; `stage1_only` keeps rows up to `T_gamma`.
    Bundle { loo_count: usize, stage1_only: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub figure: FigureId,
    pub kind: JobKind,
    pub config: RunConfig,
}

impl Job {
    pub fn file_stem(&self) -> String {
        let c = &self.config;
        let design = match c.design_kind {
            DesignKind::Gaussian => "gaussian",
            DesignKind::Rademacher => "rademacher",
        };
        format!(
            "{}_n{}_m{}_eta{}_{}_seed{}",
            self.figure.name(),
            c.n,
            c.m,
            c.eta,
            design,
            c.seed
        )
    }
}

fn resolve_init(o: &Overrides) -> Result<InitMode, HarnessError> {
    Ok(match o.init {
        None | Some(InitChoice::Random) => InitMode::GaussianRandom,
        Some(InitChoice::Data) => InitMode::DataDependent,
        Some(InitChoice::Fixed) => InitMode::Fixed(
            o.x0
                .clone()
                .ok_or_else(|| HarnessError::Usage("--init fixed requires --x0".into()))?,
        ),
    })
}

/// Expand a spec into individual runs.
pub fn plan(spec: &ExperimentSpec) -> Result<Vec<Job>, HarnessError> {
    if spec.seeds.is_empty() {
        return Err(HarnessError::Usage("at least one seed is required".into()));
    }
    let o = &spec.overrides;
    let fig = spec.figure_id;
    let ns: Vec<usize> = match (o.n, fig) {
        (Some(n), _) => vec![n],
        (None, FigureId::Fig1 | FigureId::Fig2a | FigureId::Fig2b) => vec![100, 200, 500, 800, 1000],
        (None, FigureId::Population) => vec![100, 1_000, 10_000, 100_000],
        (None, FigureId::Custom) => vec![100],
        (None, _) => vec![1000],
    };
    let etas: Vec<f64> = match (o.eta, fig) {
        (Some(e), _) => vec![e],
        (None, FigureId::Fig3a | FigureId::Fig3b) => vec![0.01, 0.05, 0.1],
        (None, _) => vec![0.1],
    };
    let kind = match fig {
        FigureId::Fig3b => JobKind::PopulationVector,
        FigureId::Population => JobKind::PopulationScalar,
        FigureId::Fig4a | FigureId::Fig4b => JobKind::Bundle {
            loo_count: o.loo_count.unwrap_or(5),
            stage1_only: fig == FigureId::Fig4a,
        },
        _ => JobKind::Empirical,
    };
    let init = resolve_init(o)?;
    let mut jobs = Vec::new();
    for &n in &ns {
        for &eta in &etas {
            for &seed in &spec.seeds {
                let mut c = RunConfig::standard(n, seed);
                c.m = o.m.unwrap_or(10 * n);
                c.eta = eta;
                // Small steps need proportionally more iterations.
                c.max_iters = o.max_iters.unwrap_or_else(|| (50.0 / eta).ceil().max(500.0) as usize);
                c.tol = o.tol.unwrap_or(1e-5);
                c.design_kind = o.design_kind.unwrap_or(if fig == FigureId::Fig5 {
                    DesignKind::Rademacher
                } else {
                    DesignKind::Gaussian
                });
                c.init_mode = init.clone();
                c.record_every = o.record_every.unwrap_or(1);
                if let JobKind::Bundle { .. } = kind {
                    if c.design_kind != DesignKind::Gaussian {
                        return Err(HarnessError::Usage(
                            "auxiliary sequences need a Gaussian design with the signal on the first axis".into(),
                        ));
                    }
                    c.tol = o.tol.unwrap_or(1e-9);
                    c.max_iters = o.max_iters.unwrap_or(1000);
                }
                c.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
                jobs.push(Job {
                    figure: fig,
                    kind: kind.clone(),
                    config: c,
                });
            }
        }
    }
    Ok(jobs)
}

/// One CSV row; `None` is written as an empty cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceRow {
    pub t: usize,
    pub dist_rel: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub ratio: Option<f64>,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub incoherence: Option<f64>,
    pub d_loo: Option<f64>,
    pub d_loo_par: Option<f64>,
    pub d_sgn: Option<f64>,
    pub d_double: Option<f64>,
}

/// 17 significant digits.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl TraceRow {
    fn cells(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(format_number).unwrap_or_default();
        vec![
            self.t.to_string(),
            f(self.dist_rel),
            f(self.alpha),
            f(self.beta),
            f(self.ratio),
            f(self.loss),
            f(self.grad_norm),
            f(self.incoherence),
            f(self.d_loo),
            f(self.d_loo_par),
            f(self.d_sgn),
            f(self.d_double),
        ]
    }
}

pub fn rows_from_record(record: &TrajectoryRecord, curves: Option<&DifferenceCurves>) -> Vec<TraceRow> {
    record
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let pick = |v: &Option<Vec<f64>>| v.as_ref().map(|c| c[k]);
            TraceRow {
                t: r.t,
                dist_rel: Some(r.dist_rel),
                alpha: Some(r.alpha),
                beta: Some(r.beta),
                ratio: Some(r.ratio),
                loss: Some(r.loss),
                grad_norm: Some(r.grad_norm),
                incoherence: r.incoherence,
                d_loo: curves.and_then(|c| pick(&c.d_loo)),
                d_loo_par: curves.and_then(|c| pick(&c.d_loo_par)),
                d_sgn: curves.map(|c| c.d_sgn[k]),
                d_double: curves.and_then(|c| pick(&c.d_double)),
            }
        })
        .collect()
}

/// Rows for a scalar population trace with a unit signal.
pub fn rows_from_points(points: &[SEPoint]) -> Vec<TraceRow> {
    points
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let s = p.alpha * p.alpha + p.beta * p.beta;
            let ga = (3.0 * s - 3.0) * p.alpha;
            let gb = (3.0 * s - 1.0) * p.beta;
            TraceRow {
                t,
                dist_rel: Some(((p.alpha.abs() - 1.0).powi(2) + p.beta * p.beta).sqrt()),
                alpha: Some(p.alpha.abs()),
                beta: Some(p.beta),
                ratio: Some(p.alpha.abs() / p.beta),
                loss: Some(0.25 * (3.0 * s * s + 3.0 - 2.0 * s - 4.0 * p.alpha * p.alpha)),
                grad_norm: Some((ga * ga + gb * gb).sqrt()),
                ..Default::default()
            }
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.cells()).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Parse a trace CSV back into rows, for consumers and tests.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Usage(format!("{} has an unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |k: usize| -> Option<f64> {
            let s = rec.get(k)?;
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        out.push(TraceRow {
            t: rec.get(0).and_then(|s| s.parse().ok()).unwrap_or_default(),
            dist_rel: num(1),
            alpha: num(2),
            beta: num(3),
            ratio: num(4),
            loss: num(5),
            grad_norm: num(6),
            incoherence: num(7),
            d_loo: num(8),
            d_loo_par: num(9),
            d_sgn: num(10),
            d_double: num(11),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub figure: FigureId,
    pub kind: JobKind,
    pub config: RunConfig,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations_run: Option<usize>,
    pub stage_times: Option<StageTimes>,
    pub loo_indices: Option<Vec<usize>>,
    pub error: Option<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub csv: Option<String>,
    pub sidecar: String,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub outputs: Vec<OutputEntry>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Result of one run, before anything touches the disk.
pub struct RunOutput {
    pub job: Job,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    pub iterations_run: Option<usize>,
    pub stage_times: Option<StageTimes>,
    pub loo_indices: Option<Vec<usize>>,
    pub error: Option<String>,
}

fn status_of(rec: &TrajectoryRecord) -> RunStatus {
    if rec.converged {
        RunStatus::Converged
    } else {
        RunStatus::MaxIters
    }
}

/// Execute one job in memory.
pub fn execute(job: &Job) -> RunOutput {
    let c = &job.config;
    let mut out = RunOutput {
        job: job.clone(),
        rows: Vec::new(),
        status: RunStatus::Diverged,
        iterations_run: None,
        stage_times: None,
        loo_indices: None,
        error: None,
    };
    let signal = match job.kind {
        JobKind::Empirical => solver::default_signal(c.n, c.design_kind, c.seed),
        _ => Signal::e1(c.n),
    };
    let signal = match signal {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let result: Result<(), String> = (|| {
        match &job.kind {
            JobKind::PopulationScalar => {
                let lg = (c.n as f64).ln();
                let p0 = SEPoint::new(1.0 / (c.n as f64 * lg).sqrt(), 1.0);
                let tr = state_evolution::population_run(p0, c.eta, c.max_iters, c.stage.gamma);
                let mut st = state_evolution::stage_times(&tr, &c.stage, c.m);
                st.t_gamma = tr.stage_times.and_then(|s| s.t_gamma);
                out.status = if st.t_gamma.is_some() {
                    RunStatus::Converged
                } else {
                    RunStatus::MaxIters
                };
                out.iterations_run = Some(tr.points.len() - 1);
                out.stage_times = Some(st);
                out.rows = rows_from_points(&tr.points);
            }
            JobKind::PopulationVector => {
                let x0 = match &c.init_mode {
                    InitMode::Fixed(x) => x.clone(),
                    _ => solver::random_init(c.n, 1.0, c.seed),
                };
                let rec = solver::run_population_with(c, &signal, x0).map_err(|e| e.to_string())?;
                out.status = status_of(&rec);
                out.iterations_run = Some(rec.iterations_run);
                out.stage_times = rec.stage_times;
                out.rows = rows_from_record(&rec, None);
            }
            JobKind::Empirical => {
                let design = generate_design(c.n, c.m, c.design_kind, &signal, c.seed, crate::rng::streams::DESIGN)
                    .map_err(|e| e.to_string())?;
                let x0 = solver::initial_point(c, &design, &signal);
                let rec = solver::run(c, &design, &signal, x0).map_err(|e| e.to_string())?;
                out.status = status_of(&rec);
                out.iterations_run = Some(rec.iterations_run);
                out.stage_times = rec.stage_times;
                out.rows = rows_from_record(&rec, None);
            }
            JobKind::Bundle { loo_count, stage1_only } => {
                let design = generate_design(c.n, c.m, c.design_kind, &signal, c.seed, crate::rng::streams::DESIGN)
                    .map_err(|e| e.to_string())?;
                let x0 = solver::initial_point(c, &design, &signal);
                let opts = BundleOptions {
                    loo_indices: auxiliary::sample_indices(c.m, *loo_count, c.seed),
                    flips: FlipSource::Random(c.seed),
                    keep_snapshots: false,
                };
                let b = auxiliary::run_bundle(c, &design, &signal, x0, &opts).map_err(|e| e.to_string())?;
                out.status = status_of(&b.base);
                out.iterations_run = Some(b.base.iterations_run);
                out.stage_times = b.base.stage_times;
                out.loo_indices = Some(b.loo_indices.clone());
                let mut rows = rows_from_record(&b.base, Some(&b.curves));
                if *stage1_only {
                    if let Some(tg) = b.base.stage_times.and_then(|s| s.t_gamma) {
                        rows.retain(|r| r.t <= tg);
                    }
                }
                out.rows = rows;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.status = RunStatus::Diverged;
        out.error = Some(e);
    }
    out
}

/// Write a run's CSV (unless it failed) and sidecar into `dir`.
pub fn persist(dir: &Path, run: &RunOutput) -> Result<OutputEntry, HarnessError> {
    let stem = run.job.file_stem();
    let csv_name = format!("{stem}.csv");
    let side_name = format!("{stem}.json");
    let csv = if run.error.is_none() {
        write_trace_csv(&dir.join(&csv_name), &run.rows)?;
        Some(csv_name)
    } else {
        None
    };
    let sidecar = Sidecar {
        figure: run.job.figure,
        kind: run.job.kind.clone(),
        config: run.job.config.clone(),
        seed: run.job.config.seed,
        status: run.status.clone(),
        iterations_run: run.iterations_run,
        stage_times: run.stage_times,
        loo_indices: run.loo_indices.clone(),
        error: run.error.clone(),
        version: VERSION.to_string(),
    };
    let side_path = dir.join(&side_name);
    fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?).map_err(io_err(&side_path))?;
    Ok(OutputEntry {
        csv,
        sidecar: side_name,
        status: run.status.clone(),
    })
}

pub fn write_manifest(spec: &ExperimentSpec, mut outputs: Vec<OutputEntry>) -> Result<(PathBuf, Manifest), HarnessError> {
    outputs.sort_by(|a, b| a.sidecar.cmp(&b.sidecar));
    let manifest = Manifest {
        spec: spec.clone(),
        outputs,
        version: VERSION.to_string(),
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = spec.output_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok((path, manifest))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

impl ExperimentOutcome {
    pub fn any_diverged(&self) -> bool {
        self.manifest.outputs.iter().any(|o| o.status == RunStatus::Diverged)
    }

    pub fn csv_paths(&self) -> Vec<PathBuf> {
        let dir = self.manifest_path.parent().unwrap_or(Path::new("."));
        self.manifest
            .outputs
            .iter()
            .filter_map(|o| o.csv.as_ref().map(|c| dir.join(c)))
            .collect()
    }
}

/// Run every job of a spec (in parallel) and write traces and the manifest.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, HarnessError> {
    let jobs = plan(spec)?;
    run_jobs(spec, &jobs)
}

pub fn run_jobs(spec: &ExperimentSpec, jobs: &[Job]) -> Result<ExperimentOutcome, HarnessError> {
    fs::create_dir_all(&spec.output_dir).map_err(io_err(&spec.output_dir))?;
    let runs = par::map(jobs, execute);
    let mut outputs = Vec::with_capacity(runs.len());
    for r in &runs {
        outputs.push(persist(&spec.output_dir, r)?);
    }
    let (manifest_path, manifest) = write_manifest(spec, outputs)?;
    Ok(ExperimentOutcome {
        manifest_path,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(fig: FigureId, dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            figure_id: fig,
            overrides: Overrides::default(),
            seeds: vec![1],
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn figure_plans() {
        let d = Path::new("unused");
        assert_eq!(plan(&spec(FigureId::Fig1, d)).unwrap().len(), 5);
        let f3 = plan(&spec(FigureId::Fig3a, d)).unwrap();
        assert_eq!(f3.len(), 3);
        assert_eq!(f3[0].config.max_iters, 5000);
        let f5 = plan(&spec(FigureId::Fig5, d)).unwrap();
        assert_eq!(f5[0].config.design_kind, DesignKind::Rademacher);
        assert!(matches!(plan(&spec(FigureId::Fig4a, d)).unwrap()[0].kind, JobKind::Bundle { loo_count: 5, stage1_only: true }));
        let mut s = spec(FigureId::Custom, d);
        s.seeds.clear();
        assert!(plan(&s).is_err());
        let mut s = spec(FigureId::Custom, d);
        s.overrides.init = Some(InitChoice::Fixed);
        assert!(matches!(plan(&s), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn number_format_has_17_significant_digits() {
        assert_eq!(format_number(0.1), "1.0000000000000001e-1");
        assert_eq!(format_number(f64::INFINITY), "inf");
        assert_eq!(format_number(-2.5), "-2.5000000000000000e0");
    }

    #[test]
    fn scalar_rows_at_truth() {
        let rows = rows_from_points(&[SEPoint::new(1.0, 0.0)]);
        assert_eq!(rows[0].dist_rel, Some(0.0));
        assert_eq!(rows[0].loss, Some(0.0));
        assert_eq!(rows[0].grad_norm, Some(0.0));
        assert_eq!(rows[0].incoherence, None);
    }
}
