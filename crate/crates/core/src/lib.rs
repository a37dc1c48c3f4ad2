//! Probabilistic safe-controller synthesis for stochastic discrete-time
//! linear systems.
//!
//! Given a linear system `x(t+1) = A x(t) + B u(t) + w(t)` with additive
//! zero-mean noise and a polyhedral safe set `S(F, g) = {x : F x <= g}`,
//! this crate designs state-feedback gains `u = K x` that make `S`
//! *lambda-contractive in probability*: whenever `x(t)` is in `S`, the next
//! state lands in the shrunk set `lambda * S` with probability at least
//! `1 - eps`. Contractivity in probability implies that `S` is positively
//! invariant in probability and that the closed loop is exponentially stable
//! in probability, so one certificate buys both safety and stability.
//!
//! Synthesis runs from three levels of knowledge about the noise
//! (known Gaussian covariance, covariance known only through samples, or
//! arbitrary unknown distribution via CVaR over scenarios) and from two
//! levels of knowledge about the plant: an explicit `(A, B)` model, or raw
//! input/state/noise data matrices with no identification step. All
//! conditions reduce to linear programs over a gain and a nonnegative
//! certificate matrix `P` obtained through Farkas duality; the minimal
//! achievable risk level is bounded by a small semidefinite program.
//!
//! Everything randomized is seeded and reproducible; Monte Carlo rollouts
//! fan out with rayon when the `parallel` feature (default) is enabled and
//! produce bit-identical reports either way.

pub mod noise;
pub mod polyhedra;
pub mod risk_bound;
pub mod sim_verify;
pub mod solver;
pub mod synth_data;
pub mod synth_model;
pub mod tightening;

// Pulls the system BLAS/LAPACK link flags in for the SDP backend.
use openblas_src as _;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dim {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("{0}")]
    Domain(String),
    #[error("matrix not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("state became non-finite at step {step}")]
    NonFinite { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dim {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
