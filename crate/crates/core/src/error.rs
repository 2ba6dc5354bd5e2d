//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A parameter set violates its invariants (positivity, basal consistency).
    InvalidParams(String),
    /// Input data cannot identify or drive the model (empty, constant, too short).
    DegenerateData(String),
    /// An iterative routine hit its iteration cap without converging.
    NonConvergence(String),
    /// Vector or matrix dimensions do not line up.
    ShapeMismatch(String),
    /// Jittered meal schedule could not be realized without overlaps.
    UnsatisfiableSchedule(String),
    /// Virtual patient state exceeded the blow-up guard.
    UnstableConfiguration(String),
    /// A loss or gradient evaluated to a non-finite value.
    NonFinite(String),
    /// Configuration value out of range.
    InvalidConfig(String),
    /// Training loss diverged; carries the iteration of the last finite state.
    Diverged { at_iter: usize },
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParams(m) => write!(f, "invalid parameters: {m}"),
            Error::DegenerateData(m) => write!(f, "degenerate data: {m}"),
            Error::NonConvergence(m) => write!(f, "no convergence: {m}"),
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::UnsatisfiableSchedule(m) => write!(f, "unsatisfiable schedule: {m}"),
            Error::UnstableConfiguration(m) => write!(f, "unstable configuration: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::InvalidConfig(m) => write!(f, "invalid config: {m}"),
            Error::Diverged { at_iter } => {
                write!(f, "training diverged at iteration {at_iter}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
