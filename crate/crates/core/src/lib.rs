//! Surrogate-backed feature attribution and its evaluation.

pub mod amortized;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod gradient;
pub mod masking;
pub mod models;
pub mod nn;
pub mod persist;
pub mod prob;
pub mod quadrature;
pub mod shapley;
pub mod surrogate;
pub mod synthetic;
pub mod value;

pub use error::{Error, Result};
