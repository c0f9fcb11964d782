use thiserror::Error;

pub type Result<T, E = DiffusionError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("index ({row}, {col}) outside a {height}x{width} field")]
    Index {
        row: isize,
        col: isize,
        height: usize,
        width: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric blowup: non-finite value at pixel {pixel} ({value})")]
    NumericBlowup { pixel: usize, value: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<DiffusionError>,
    },
}

impl DiffusionError {
    pub(crate) fn parse_at_byte(offset: usize, message: impl Into<String>) -> Self {
        DiffusionError::Parse {
            location: format!("byte {offset}"),
            message: message.into(),
        }
    }

    pub(crate) fn parse_at_line(line: usize, message: impl Into<String>) -> Self {
        DiffusionError::Parse {
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    /// Strips any iteration annotation.
    pub fn root(&self) -> &DiffusionError {
        match self {
            DiffusionError::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for DiffusionError {
    fn from(err: std::io::Error) -> Self {
        DiffusionError::Io(err.to_string())
    }
}
