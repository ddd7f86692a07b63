use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum UotError {
    /// An argument lies outside the domain of a scalar map.
    #[error("domain error: {0}")]
    Domain(String),
    /// Shapes, supports or ground sets do not line up.
    #[error("structural mismatch: {0}")]
    Structural(String),
    /// The constraint set of a (lifted) problem is empty on the given grid.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Malformed or invalid user input.
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, UotError>;
