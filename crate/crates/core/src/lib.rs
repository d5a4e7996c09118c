//! Molecular kernels, (truncated) kernel ridge regression and kernel
//! spectrum metrics, plus the experiment drivers behind the `molkernel` CLI.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod regression;
pub mod spectral;

pub use error::{Error, Result};
