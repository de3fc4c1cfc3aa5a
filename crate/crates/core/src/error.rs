use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fiber link: {0}")]
    InvalidLink(String),

    #[error("invalid step coefficients: {0}")]
    InvalidCoefficients(String),

    /// `1 - phi_b / level` went negative at event `index`.
    #[error("negative radicand at event {index} (phi = {phi}, level = {level})")]
    NegativeRadicand { index: usize, phi: f64, level: f64 },

    /// The running product of squared magnitudes reached zero before event `index`.
    #[error("running level reached zero before event {index}")]
    ZeroLevel { index: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("sampling grid too coarse: phase step {phase_step:.3e} rad exceeds {limit:.3e} rad")]
    GridTooCoarse { phase_step: f64, limit: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver did not converge after {iterations} sweeps (KKT violation {violation:.3e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("cluster enumeration needs {combinations} combinations, cap is {cap}")]
    EnumerationCap { combinations: u128, cap: u128 },

    #[error("spacing constraint could not be met after {retries} draws for link {link}")]
    SpacingRetries { link: usize, retries: usize },

    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }
}
