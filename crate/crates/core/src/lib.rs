//! Multiple contrast tests for dose-finding trials, with population-based
//! and randomization-based inference.
//!
//! The crate covers candidate dose-response shapes and their optimal
//! contrasts, logistic fits (maximum likelihood and Firth-penalised) with
//! exact separation detection, the CR / RA / PBD randomization procedures,
//! Monte Carlo and exact randomization tests, and a simulation engine for
//! power and type-I error studies.

pub mod contrasts;
pub mod data;
pub mod dose_response;
pub mod error;
pub mod glm;
pub mod inference;
pub mod linalg;
pub mod randomization;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
