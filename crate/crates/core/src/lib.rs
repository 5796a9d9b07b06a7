//! Random forests for conditional quantile estimation and prediction
//! intervals, tuned by quantile coverage loss.
//!
//! Regression forests average terminal-node empirical distributions; survival
//! forests average terminal-node Kaplan-Meier distributions. Tuning picks
//! `(mtry, nodesize)` per quantile level by minimizing the distance between
//! the out-of-bag marginal coverage estimate and the target level, with
//! censoring-aware coverage estimators for right-censored responses.

pub mod data;
pub mod error;
pub mod forest;
pub mod harness;
pub mod intervals;
pub mod io;
pub mod km;
pub mod metrics;
pub mod quantile;
pub mod rng;
pub mod simgen;
pub mod tuning;

pub use data::{ColumnKind, Dataset, ForestParams, QuantileRequest, Resample, StepCdf, PROB_EPS};
pub use error::{Error, Result};
pub use forest::{fit_forest, Forest, Task};
