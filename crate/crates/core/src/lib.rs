//! Numerical toolkit for periodic homogenization of wave equations:
//! cell problems and effective tensors, Dirichlet correctors, spectral
//! filtering, convergence-rate benchmarks, observability diagnostics and
//! HUM boundary controls on intervals and rectangles.

pub mod analysis;
pub mod cell;
pub mod coeff;
pub mod config;
pub mod elliptic;
pub mod fem;
pub mod hum;
pub mod io;
pub mod runner;
pub mod spectral;
pub mod wave;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("numerically singular system: {0}")]
    Singular(String),
    #[error("instability detected: {0}")]
    Unstable(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
