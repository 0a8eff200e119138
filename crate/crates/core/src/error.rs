use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PumcError>;

#[derive(Debug, Error)]
pub enum PumcError {
    #[error("index ({row}, {col}) out of range for a {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Context {
        stage: String,
        #[source]
        source: Box<PumcError>,
    },
}

impl PumcError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PumcError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn context(self, stage: impl Into<String>) -> Self {
        PumcError::Context {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            PumcError::Context { source, .. } => source.exit_code(),
            PumcError::Config(_) | PumcError::InvalidParameter(_) => 2,
            PumcError::Numeric(_) => 4,
            PumcError::IndexOutOfRange { .. }
            | PumcError::DimensionMismatch(_)
            | PumcError::SizeLimit(_)
            | PumcError::Data(_)
            | PumcError::Parse { .. }
            | PumcError::Io { .. } => 3,
        }
    }
}

pub(crate) fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PumcError::Numeric(format!("{name} contains non-finite values")))
    }
}
