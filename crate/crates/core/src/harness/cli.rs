//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 a run diverged, 3 I/O failure.

use super::{run_experiment, ExperimentSpec, FigureId, HarnessError, InitChoice, Overrides};
use crate::model::DesignKind;
use crate::par;
use crate::verification::{self, HessianEnvelope};
use crate::linalg::PowerOptions;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "wflow", version, about = "Randomly initialized Wirtinger flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gradient descent on the empirical loss.
    Simulate(RunArgs),
    /// Population dynamics: the (alpha, beta) recursion, or full vectors with --vector.
    Population {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        vector: bool,
    },
    /// Base sequence with leave-one-out and random-sign auxiliaries.
    Bundle(RunArgs),
    /// Monte Carlo concentration checks; writes a JSON report.
    Verify(VerifyArgs),
    /// Reproduce one figure's data.
    Figure {
        #[arg(value_enum)]
        id: FigureId,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a positive finite number, got {s}"))
    }
}

fn nonnegative_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be nonnegative, got {s}"))
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_negative_numbers = true, value_parser = positive_f64)]
    eta: Option<f64>,
    /// Single seed; shorthand for --seeds.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true, value_parser = nonnegative_f64)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    design: Option<DesignKind>,
    #[arg(long, value_enum)]
    init: Option<InitChoice>,
    /// Comma-separated initial point, used with --init fixed.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Vec<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    record_every: Option<u64>,
    #[arg(long)]
    loo_count: Option<usize>,
}

impl RunArgs {
    fn spec(&self, figure_id: FigureId) -> ExperimentSpec {
        let seeds = match (self.seed, self.seeds.is_empty()) {
            (Some(s), _) => vec![s],
            (None, false) => self.seeds.clone(),
            (None, true) => vec![1],
        };
        ExperimentSpec {
            figure_id,
            overrides: Overrides {
                n: self.n,
                m: self.m,
                eta: self.eta,
                max_iters: self.iters,
                tol: self.tol,
                design_kind: self.design,
                init: self.init,
                x0: (!self.x0.is_empty()).then(|| self.x0.clone()),
                record_every: self.record_every.map(|k| k as usize),
                loo_count: self.loo_count,
            },
            seeds,
            output_dir: self.out.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Check {
    /// Maxima of |a_i1| and ||a_i|| over the design.
    DesignMaxima,
    /// Spectral deviation of the weighted Gram matrix across sample sizes.
    Hessian,
    /// Hessian norm against 10||z||^2 + 4 at random points.
    Smoothness,
    /// Polynomial sample-mean concentration, selected with --case.
    Polynomial,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    check: Check,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=6))]
    case: u8,
    #[arg(long, default_value_t = 0.5, value_parser = positive_f64)]
    epsilon: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn run_verify(a: &VerifyArgs) -> Result<PathBuf, (i32, String)> {
    let usage = |e: verification::VerificationError| (EXIT_USAGE, e.to_string());
    let json = match a.check {
        Check::DesignMaxima => serde_json::to_value(verification::check_design_maxima(a.n, a.m, a.trials, a.seed).map_err(usage)?),
        Check::Hessian => {
            let ms: Vec<usize> = [1, 2, 4, 8].iter().map(|k| k * a.m).collect();
            serde_json::to_value(
                verification::check_hessian_concentration(a.n, &ms, a.trials, a.seed, HessianEnvelope::default())
                    .map_err(usage)?,
            )
        }
        Check::Smoothness => serde_json::to_value(
            verification::check_local_smoothness(a.n, a.m, a.trials, a.seed, (0.0, 2.0), PowerOptions::default())
                .map_err(usage)?,
        ),
        Check::Polynomial => serde_json::to_value(
            verification::check_polynomial_concentration(a.case, a.n, a.m, a.trials, a.seed, a.epsilon).map_err(usage)?,
        ),
    }
    .map_err(|e| (EXIT_IO, e.to_string()))?;
    let io = |e: std::io::Error| (EXIT_IO, format!("{}: {e}", a.out.display()));
    fs::create_dir_all(&a.out).map_err(io)?;
    let name = match a.check {
        Check::Polynomial => format!("verify_polynomial{}_seed{}.json", a.case, a.seed),
        c => format!("verify_{}_seed{}.json", c.to_possible_value().expect("named").get_name(), a.seed),
    };
    let path = a.out.join(name);
    let text = serde_json::to_string_pretty(&json).map_err(|e| (EXIT_IO, e.to_string()))?;
    fs::write(&path, text).map_err(io)?;
    Ok(path)
}

fn exit_for(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Usage(_) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

/// Parse `argv` (including the program name) and run. Messages go to
/// stdout and stderr; the return value is the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    par::init_from_env();
    let spec = match &cli.command {
        Command::Verify(a) => {
            return match run_verify(a) {
                Ok(p) => {
                    println!("{}", p.display());
                    EXIT_OK
                }
                Err((code, msg)) => {
                    eprintln!("error: {msg}");
                    code
                }
            };
        }
        Command::Simulate(r) => r.spec(FigureId::Custom),
        Command::Population { run, vector } => {
            run.spec(if *vector { FigureId::Fig3b } else { FigureId::Population })
        }
        Command::Bundle(r) => r.spec(FigureId::Fig4b),
        Command::Figure { id, run } => run.spec(*id),
    };
    match run_experiment(&spec) {
        Ok(outcome) => {
            for p in outcome.csv_paths() {
                println!("{}", p.display());
            }
            println!("{}", outcome.manifest_path.display());
            if outcome.any_diverged() {
                eprintln!("error: at least one run diverged; see {}", outcome.manifest_path.display());
                EXIT_DIVERGED
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
