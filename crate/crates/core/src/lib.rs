#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Smoothing metrics for multivariate conditional autoregressive priors.

pub mod data;
pub mod error;
pub mod graph;
pub mod io;
pub mod mcmc;
pub mod metrics;
pub mod poisson_gamma;
pub mod prior;
pub mod rng;
pub mod scenario;
pub mod study;
pub mod tcv;

pub use error::{Error, Result};
pub use graph::ArealGraph;
