//! Renewal-process models for intermittent demand forecasting.
//!
//! Demand for a single item is a nonnegative integer series that is zero in
//! most review periods. This crate models such series through their issue
//! points: the interdemand times `Q_i` between nonzero periods and the demand
//! sizes `M_i` observed there. Interdemand times follow a (possibly
//! self-modulating) discrete-time renewal process, which gives access to
//! hazard-rate forecasts and forward sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`series`] converts between per-period and size–interval form.
//! - [`distributions`] holds the shifted count laws and the exponential law.
//! - [`modulators`] holds the EWMA and stationary-AR mean recursions.
//! - [`neural`] is a small from-scratch LSTM with likelihood heads and Adam.
//! - [`models`] assembles the Static / EWMA / stationary-AR / RNN model lattice.
//! - [`pointprocess`] holds the continuous-time marked renewal processes.
//! - [`baselines`] implements Croston, SBA and TSB point forecasts.
//! - [`metrics`] implements the accuracy metrics and SBC classification.
//! - [`synthgen`] generates the synthetic benchmark regimes.
//! - [`harness`] covers ingestion, dataset summaries and experiment runs.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]

pub mod baselines;
pub mod distributions;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod modulators;
pub mod neural;
pub mod pointprocess;
pub mod rng;
pub mod series;
pub mod synthgen;

pub use distributions::DistributionSpec;
pub use series::{DemandSeries, SizeIntervalSeries};

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data violated a structural invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),
    /// A configuration value was out of its allowed range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A distribution parameter was outside the domain of its family.
    #[error("invalid parameter for {kind}: {message}")]
    InvalidParameter {
        /// Distribution family name.
        kind: &'static str,
        /// What was wrong.
        message: String,
    },
    /// An argument was outside the support or domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The operation is not defined for this distribution kind.
    #[error("operation `{op}` is not defined for {kind}")]
    UnsupportedKind {
        /// Operation name.
        op: &'static str,
        /// Distribution family name.
        kind: &'static str,
    },
    /// Inversion sampling walked past the hard support cap.
    #[error("sampling cap of {cap} exceeded for {spec}")]
    SamplingCap {
        /// The cap that was hit.
        cap: u64,
        /// Description of the offending distribution.
        spec: String,
    },
    /// Not enough issue points or events to fit a model.
    #[error("cannot fit model for item `{item}`: {reason}")]
    Unfit {
        /// Item identifier.
        item: String,
        /// Why fitting was impossible.
        reason: String,
    },
    /// Training produced a non-finite loss or state.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged {
        /// Epoch at which the problem was detected.
        epoch: usize,
        /// Diagnostic detail.
        detail: String,
    },
    /// Matrices passed to a metric have incompatible shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A metric has no defined value for the given input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Parsing a file failed.
    #[error("parse error: {0}")]
    Parse(String),
    /// I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
