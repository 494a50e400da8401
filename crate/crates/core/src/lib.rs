//! Randomly initialized gradient descent (Wirtinger flow) for real Gaussian
//! phase retrieval, together with the tools used to study its dynamics:
//! population and approximate state evolution, leave-one-out and random-sign
//! auxiliary sequences, stage detection and Monte-Carlo concentration checks.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] draws design ensembles and owns the signal/orthogonal split.
//! * [`objective`] evaluates the quartic loss, its derivatives, the population
//!   gradient and the fluctuation breakdown.
//! * [`solver`] runs gradient descent and records per-iteration diagnostics.
//! * [`state_evolution`] works with the two-dimensional `(alpha, beta)` recursion.
//! * [`auxiliary`] runs the leave-one-out / random-sign sequences in lockstep.
//! * [`verification`] holds the Monte-Carlo concentration verifiers.
//! * [`harness`] is the experiment runner and CLI backend.
//!
//! With the default `parallel` feature, sweeps, trials and per-step work are
//! spread over a rayon pool. Without it everything runs sequentially and
//! produces bit-identical results.

pub mod auxiliary;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod par;
pub mod rng;
pub mod solver;
pub mod state_evolution;
pub mod verification;

pub use model::{DesignEnsemble, DesignKind, Signal, SignFlipVector};
pub use solver::{RunConfig, TrajectoryRecord};
