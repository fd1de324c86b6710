use thiserror::Error;

/// Errors raised by the channel, modem, beamformer, detector and simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range.
    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// Two inputs that must agree in size do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An exhaustive search was requested on an instance above the guard rail.
    #[error("instance too large for exhaustive search: {candidates} candidates (limit {limit})")]
    TooLarge { candidates: f64, limit: usize },

    /// Fewer distinct directions exist than beams requested.
    #[error("requested {requested} beams but only {available} distinct arrival angles exist")]
    NotEnoughDirections { requested: usize, available: usize },

    #[error("failed to parse {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }

    /// True for errors caused by user-supplied configuration rather than runtime failures.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::Parse { .. } | Error::NotEnoughDirections { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
