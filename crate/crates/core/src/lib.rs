//! Learning interpretable booster-vaccination policies.
//!
//! The pipeline generates synthetic monthly patient histories from a
//! logistic-hazard ground truth ([`cohort`]), fits a stacked-LSTM simulator
//! to them ([`env`]), trains tabular or deep Q-learning against either the
//! simulator or the exactly tabulated MDP ([`qlearn`]), and checks the
//! outcome against dynamic-programming solutions ([`oracle`]) and baseline
//! policies ([`evalx`]).

pub mod cli;
pub mod cohort;
pub mod env;
pub mod evalx;
pub mod oracle;
pub mod qlearn;
pub mod types;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("missing upstream artifact: {0}")]
    Missing(PathBuf),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("refusing oversized problem: {0}")]
    Size(String),
    #[error(transparent)]
    Neural(#[from] booster_neural::NeuralError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
