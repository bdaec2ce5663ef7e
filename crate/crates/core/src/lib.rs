//! Hour-conditioned, incident-aware traffic forecasting.
//!
//! The crate is organised as a pipeline:
//!
//! - [`data_io`] loads (or synthesizes) stations, flow counts and crash records.
//! - [`graph_prior`] estimates the hour-of-day CV profile and samples the
//!   log-normal travel-time bank.
//! - [`incident`] turns crashes into severity scores and hourly node risk.
//! - [`adjacency`] couples travel times with risk and builds the 24
//!   hour-conditioned adjacency matrices.
//! - [`autodiff`] is a small dense reverse-mode engine used to train
//!   [`model`], the encoder-decoder spatio-temporal transformer.
//! - [`training`] handles windowing, optimisation and conformal calibration.
//! - [`evaluation`] provides metrics, the historical-average baseline, the
//!   KS log-normal test and a route Monte-Carlo sampler.
//! - [`pipeline`] wires everything together for the CLI.

pub mod adjacency;
pub mod autodiff;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod graph_prior;
pub mod incident;
pub mod matrix_io;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use error::{Error, Result};

/// Numerical-stability constant used wherever a denominator may vanish.
pub const DEFAULT_EPS: f64 = 1e-8;
