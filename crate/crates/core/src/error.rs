//! Error type shared by the grid, solver and I/O layers.

use std::fmt;

use crate::grid::GridSpec;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A field was used with a time layout the operation does not accept.
    LayoutMismatch { expected: &'static str, found: &'static str },
    /// Time index outside the valid range of a layout (time never wraps).
    TimeIndexOutOfRange { index: usize, len: usize },
    /// Invalid grid or solver parameter.
    InvalidParameter(String),
    /// A solver iterate became non-finite; carries the iteration index.
    NonFinite { context: &'static str, iter: usize },
    /// Evaluated ground metric is not symmetric positive definite at a cell.
    NotSpd { cell: usize },
    /// Configuration file problem (parse error, unknown key, invariant violation).
    Config(String),
    /// A file declared a grid spec that does not match the expected one.
    GridMismatch { expected: GridSpec, found: GridSpec },
    /// Malformed data file.
    Parse { path: String, line: usize, msg: String },
    Io(std::io::Error),
    /// Failure inside a pipeline stage, labelled with the stage name.
    Stage { stage: String, source: Box<Error> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::LayoutMismatch { expected, found } => {
                write!(f, "layout mismatch: expected {expected}, found {found}")
            }
            Error::TimeIndexOutOfRange { index, len } => {
                write!(f, "time index {index} out of range (layout has {len} slices)")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::NonFinite { context, iter } => {
                write!(f, "non-finite value in {context} at iteration {iter}")
            }
            Error::NotSpd { cell } => {
                write!(f, "ground metric not symmetric positive definite at cell {cell}")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::GridMismatch { expected, found } => write!(
                f,
                "grid spec mismatch: expected dim={} m={} n={} T={}, found dim={} m={} n={} T={}",
                expected.dim, expected.m, expected.n, expected.horizon,
                found.dim, found.m, found.n, found.horizon
            ),
            Error::Parse { path, line, msg } => write!(f, "{path}:{line}: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Stage { stage, source } => write!(f, "stage '{stage}': {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }
}
