//! Performance analysis of HARQ with incremental redundancy over
//! time-correlated Rayleigh fading channels.
//!
//! The analytic path approximates the distribution of the accumulated
//! mutual information by a Gamma density multiplied by a polynomial
//! correction that is fitted through moment matching and monic orthogonal
//! polynomials. Outage probability, average transmission count, long-term
//! average throughput (LTAT), diversity order and throughput-optimal rates
//! all derive from that fit. A seeded Monte-Carlo simulator of the same
//! channel model serves as the independent cross-check for every quantity.

pub mod channel;
pub mod config;
pub mod dd;
pub mod gammafit;
pub mod metrics;
pub mod moments;
pub mod montecarlo;
pub mod optimizer;
pub mod specfun;

use thiserror::Error;

/// Errors surfaced by the analytic and simulation layers.
#[derive(Debug, Error)]
pub enum HarqError {
    /// An argument violated a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The inputs left the numerically supported domain (e.g. a series
    /// convergence guard tripped).
    #[error("domain error: {0}")]
    Domain(String),
    /// A recurrence or linear solve lost too much precision to be trusted.
    #[error("conditioning error: {0}")]
    Conditioning(String),
    /// An analytically exact identity failed to hold numerically,
    /// indicating a bug rather than an input problem.
    #[error("internal consistency violation: {0}")]
    Consistency(String),
    /// A constrained optimization problem has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, HarqError>;
