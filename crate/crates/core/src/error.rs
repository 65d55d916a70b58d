use thiserror::Error;

/// Errors raised by the engine.
///
/// The variants map onto the exit-code classes used by the command line
/// front end (see [`Error::exit_code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected {expected}, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("type error: {0}")]
    Type(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("state integrity error: {0}")]
    Integrity(String),

    #[error("resource guard: {0}")]
    Resource(String),

    #[error("divergence: non-finite state after t = {last_finite_time}")]
    Divergence { last_finite_time: f64 },

    #[error("degenerate ensemble: {0}")]
    Degenerate(String),

    #[error("property failure: {0}")]
    Property(String),

    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Syntax { .. } | Error::Config(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Property(_) => 4,
            Error::Io(_) | Error::Format(_) => 5,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
