//! Analytical diffusion laboratory: closed-form denoisers over finite
//! datasets, dataset spectral statistics, sensitivity fields, covariance
//! manipulation, deterministic DDIM sampling, and comparison metrics —
//! no trained network anywhere.

// Indexed loops over matrix rows/columns are the clearest way to write the
// dense linear algebra here; iterator rewrites obscure the math.
#![allow(clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod denoisers;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod numerics;
pub mod sampler;
pub mod schedule;
pub mod sensitivity;
pub mod spectral;

pub use error::{AdlError, Result};
