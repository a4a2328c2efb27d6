use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("event localization failed near t = {t}: bisection did not converge in {iterations} iterations")]
    EventLocalization { t: f64, iterations: usize },

    #[error("integration diverged at t = {t}: non-finite state")]
    Divergence { t: f64 },

    #[error("limit cycle not settled: residual ({x:.3e}, {xdot:.3e}) exceeds tolerance {tolerance:.1e}")]
    NotSettled { x: f64, xdot: f64, tolerance: f64 },

    #[error("ambiguous switching: expected 2 threshold crossings per period, found {crossings}")]
    AmbiguousSwitching { crossings: usize },

    #[error("resampling required: {0}")]
    ResamplingRequired(String),

    #[error("aliasing: chirp upper frequency {f_hi} Hz is not below the Nyquist frequency {nyquist} Hz")]
    Aliasing { f_hi: f64, nyquist: f64 },

    #[error("singular frequency: harmonic system could not be solved at omega = {omega:?} rad/s")]
    SingularFrequency { omega: Vec<f64> },

    #[error("ill-conditioned normal equations (condition estimate {condition:.3e}); try a larger alpha")]
    IllConditioned { condition: f64 },

    #[error("no data: {0}")]
    NoData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures caused by user-supplied settings or files rather
    /// than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::Aliasing { .. }
                | Error::ResamplingRequired(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
