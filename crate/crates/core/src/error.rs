use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown county fips: {}", .0.join(", "))]
    UnknownCounty(Vec<String>),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing case series for county {0}")]
    MissingCases(String),

    #[error("missing prevalence estimate for origin county {0}")]
    MissingPrevalence(String),

    #[error("county {0} is not mapped to a district")]
    UnmappedCounty(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate choice set for origin {0}: every utility is -inf")]
    DegenerateChoice(String),

    #[error(
        "fit did not converge after {iterations} iterations (gradient max-norm {gradient_norm:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last: Box<crate::evacmodel::BetaEvacModel>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Input rejected because it violates a documented contract, as opposed
    /// to an I/O or internal failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::UnknownCounty(_)
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::UnmappedCounty(_)
                | Error::DimensionMismatch(_)
                | Error::MissingCases(_)
                | Error::MissingPrevalence(_)
        )
    }
}
