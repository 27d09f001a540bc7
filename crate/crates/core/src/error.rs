use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid simplex point: {0}")]
    InvalidSimplex(String),

    #[error("profile fails the {check} check at tolerance {tol:e}")]
    DefinitionalCheck { check: &'static str, tol: f64 },

    /// A logarithm was requested of a component that has reached the boundary.
    #[error("state diverged to the boundary: component {block}_{index} = {value:e} on the reference support")]
    DivergedToBoundary {
        block: char,
        index: usize,
        value: f64,
    },

    #[error("non-finite state at step {step}: {snapshot}")]
    NonFinite { step: u64, snapshot: String },

    #[error("game of size {rows}x{cols} exceeds the enumeration cap of {cap}")]
    EnumerationCap { rows: usize, cols: usize, cap: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("diffusion rejected: {0}")]
    Diffusion(String),

    #[error("empty averaging window: {0}")]
    EmptyWindow(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
