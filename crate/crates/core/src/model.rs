//! Measurement model: ground-truth signal, design ensembles and the
//! signal/orthogonal decomposition of iterates.

use crate::linalg::{self, Householder};
use crate::rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, got })
    }
}

/// Ground-truth signal with its cached Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    entries: Vec<f64>,
    norm: f64,
}

impl Signal {
    pub fn new(entries: Vec<f64>) -> Result<Self, ModelError> {
        if entries.len() < 2 {
            return Err(ModelError::InvalidArgument(format!(
                "signal length must be at least 2, got {}",
                entries.len()
            )));
        }
        if !linalg::is_finite(&entries) {
            return Err(ModelError::InvalidArgument(
                "signal entries must be finite".into(),
            ));
        }
        let norm = linalg::norm(&entries);
        Ok(Self { entries, norm })
    }

    /// `scale * e_1`, the default frame used by the analysis.
    pub fn first_axis(n: usize, scale: f64) -> Result<Self, ModelError> {
        let mut entries = vec![0.0; n];
        if n > 0 {
            entries[0] = scale;
        }
        Self::new(entries)
    }

    /// Unit `e_1`.
    pub fn e1(n: usize) -> Result<Self, ModelError> {
        Self::first_axis(n, 1.0)
    }

    /// Uniform direction on the unit sphere, drawn from `(seed, SIGNAL)`.
    pub fn random_unit(n: usize, seed: u64) -> Result<Self, ModelError> {
        let mut v = rng::gaussian_vec(&mut rng::stream(seed, rng::streams::SIGNAL), n);
        let nv = linalg::norm(&v);
        linalg::scale(1.0 / nv, &mut v);
        Self::new(v)
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// True for exactly `e_1` (unit norm, other entries zero).
    pub fn is_unit_first_axis(&self) -> bool {
        self.entries[0] == 1.0 && self.entries[1..].iter().all(|&v| v == 0.0)
    }

    /// Unit vector along the signal. Errors on the zero signal.
    pub fn direction(&self) -> Result<Vec<f64>, ModelError> {
        if self.norm == 0.0 {
            return Err(ModelError::InvalidArgument("zero signal".into()));
        }
        Ok(self.entries.iter().map(|v| v / self.norm).collect())
    }

    /// Reflection taking this signal to `||x||·e_1`.
    pub fn frame(&self) -> Householder {
        Householder::to_first_axis(&self.entries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Gaussian,
    Rademacher,
}

/// Design vectors `a_i` (row-major `m x n`) with measurements `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEnsemble {
    n: usize,
    m: usize,
    rows: Vec<f64>,
    kind: DesignKind,
    measurements: Vec<f64>,
    seed: u64,
    stream_id: u64,
}

impl DesignEnsemble {
    /// Assemble an ensemble from explicit rows and measure it against `signal`.
    pub fn from_rows(
        n: usize,
        rows: Vec<f64>,
        kind: DesignKind,
        signal: &Signal,
    ) -> Result<Self, ModelError> {
        check_len(n, signal.len())?;
        if n == 0 || !rows.len().is_multiple_of(n) {
            return Err(ModelError::InvalidArgument(format!(
                "row buffer of length {} is not a multiple of n = {n}",
                rows.len()
            )));
        }
        let m = rows.len() / n;
        let measurements = measure(&rows, n, signal)?;
        Ok(Self {
            n,
            m,
            rows,
            kind,
            measurements,
            seed: 0,
            stream_id: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn measurements(&self) -> &[f64] {
        &self.measurements
    }

    /// Overwrite row `i` in place while keeping the recorded measurement.
    ///
    /// Used to poison a row after measurement capture when checking that a
    /// computation never reads it.
    pub fn overwrite_row_keep_measurement(&mut self, i: usize, values: &[f64]) {
        let n = self.n;
        self.rows[i * n..(i + 1) * n].copy_from_slice(values);
    }

    /// Apply an isometry to every row and re-measure against `signal`.
    pub fn transformed(&self, h: &Householder, signal: &Signal) -> Result<Self, ModelError> {
        check_len(self.n, h.dim())?;
        let mut rows = self.rows.clone();
        for r in rows.chunks_exact_mut(self.n) {
            h.apply_in_place(r);
        }
        let mut out = Self::from_rows(self.n, rows, self.kind, signal)?;
        out.seed = self.seed;
        out.stream_id = self.stream_id;
        Ok(out)
    }
}

/// Draw an `m x n` ensemble from stream `(seed, stream_id)` and measure it.
pub fn generate_design(
    n: usize,
    m: usize,
    kind: DesignKind,
    signal: &Signal,
    seed: u64,
    stream_id: u64,
) -> Result<DesignEnsemble, ModelError> {
    if n < 2 {
        return Err(ModelError::InvalidArgument(format!("n must be at least 2, got {n}")));
    }
    if m < 1 {
        return Err(ModelError::InvalidArgument("m must be at least 1".into()));
    }
    check_len(n, signal.len())?;
    let mut r = rng::stream(seed, stream_id);
    let rows = match kind {
        DesignKind::Gaussian => rng::gaussian_vec(&mut r, m * n),
        DesignKind::Rademacher => (0..m * n).map(|_| rng::rademacher(&mut r)).collect(),
    };
    let mut design = DesignEnsemble::from_rows(n, rows, kind, signal)?;
    design.seed = seed;
    design.stream_id = stream_id;
    Ok(design)
}

/// `y_i = <a_i, x>^2` for each row of a row-major buffer.
pub fn measure(rows: &[f64], n: usize, signal: &Signal) -> Result<Vec<f64>, ModelError> {
    check_len(n, signal.len())?;
    Ok(rows
        .chunks_exact(n)
        .map(|a| {
            let s = linalg::dot(a, signal.entries());
            s * s
        })
        .collect())
}

/// Random signs `xi_i` used to rebuild the first design coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignFlipVector {
    flips: Vec<i8>,
}

impl SignFlipVector {
    pub fn new(flips: Vec<i8>) -> Result<Self, ModelError> {
        if flips.iter().any(|&f| f != 1 && f != -1) {
            return Err(ModelError::InvalidArgument("flips must be +1 or -1".into()));
        }
        Ok(Self { flips })
    }

    /// Fair independent coins from stream `(seed, FLIPS)`.
    pub fn random(m: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::streams::FLIPS);
        let flips = (0..m)
            .map(|_| if rng::rademacher(&mut r) > 0.0 { 1 } else { -1 })
            .collect();
        Self { flips }
    }

    /// `xi_i = sgn(a_{i,1})`, which makes the flipped design equal the original.
    /// A zero first entry maps to `+1`.
    pub fn matching(design: &DesignEnsemble) -> Self {
        let flips = (0..design.m())
            .map(|i| if design.row(i)[0] < 0.0 { -1 } else { 1 })
            .collect();
        Self { flips }
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.flips
    }
}

/// Row `i` becomes `(xi_i |a_{i,1}|, a_{i,perp})`; measurements are kept.
///
/// Against a first-axis signal the measurements are unchanged by construction.
/// A first entry of exactly zero stays zero.
pub fn flip_first_entry(
    design: &DesignEnsemble,
    flips: &SignFlipVector,
) -> Result<DesignEnsemble, ModelError> {
    check_len(design.m(), flips.len())?;
    let n = design.n;
    let mut rows = design.rows.clone();
    for (row, &f) in rows.chunks_exact_mut(n).zip(flips.as_slice()) {
        row[0] = f64::from(f) * row[0].abs();
    }
    Ok(DesignEnsemble {
        rows,
        ..design.clone()
    })
}

/// Split of a vector into its component along the signal and the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Coefficient along the unit signal direction.
    pub parallel: f64,
    pub orthogonal_norm: f64,
    pub orthogonal: Vec<f64>,
}

pub fn decompose(x: &[f64], signal: &Signal) -> Result<Decomposition, ModelError> {
    check_len(signal.len(), x.len())?;
    if signal.is_unit_first_axis() {
        let orthogonal: Vec<f64> = std::iter::once(0.0).chain(x[1..].iter().copied()).collect();
        return Ok(Decomposition {
            parallel: x[0],
            orthogonal_norm: linalg::norm(&x[1..]),
            orthogonal,
        });
    }
    let u = signal.direction()?;
    let parallel = linalg::dot(x, &u);
    let mut orthogonal = x.to_vec();
    linalg::axpy(-parallel, &u, &mut orthogonal);
    Ok(Decomposition {
        parallel,
        orthogonal_norm: linalg::norm(&orthogonal),
        orthogonal,
    })
}
