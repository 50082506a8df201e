//! Prediction-based Mean-Variance-Skewness portfolio optimization.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`market_data`]: weekly sampling of closing prices, simple returns, universe alignment
//! - [`predictor`]: one nonlinear autoregressive network per asset, trained with Levenberg-Marquardt
//! - [`risk_model`]: expected returns, prediction-error covariance and per-asset skewness
//! - [`eval_metrics`]: forecast accuracy metrics and a Kolmogorov-Smirnov normality test
//! - [`objective`]: chromosome decoding under weight bounds and the penalized MVS cost
//! - [`ga_solver`]: steady-state genetic algorithm over (subset, allocation) chromosomes
//! - [`taguchi_tuner`]: L27 orthogonal-array tuning of the GA parameters
//! - [`frontier`]: (λ, θ) sweeps and efficient-frontier extraction
//! - [`pipeline`]: staged on-disk runner used by the `mvs` command-line tool

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval_metrics;
pub mod frontier;
pub mod ga_solver;
pub mod market_data;
pub mod objective;
pub mod pipeline;
pub mod predictor;
pub mod risk_model;
pub mod seed;
pub mod synthetic;
pub mod taguchi_tuner;

pub use error::{Error, Result};
