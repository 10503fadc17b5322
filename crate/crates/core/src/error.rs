use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("numerical error{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numerical {
        message: String,
        iteration: Option<usize>,
    },

    /// `delta' Omega delta == 0`, so the membership update is undefined.
    #[error("degenerate signal: mean shift is identically zero")]
    DegenerateSignal,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            iteration: None,
        }
    }

    pub(crate) fn numerical_at(message: impl Into<String>, iteration: usize) -> Self {
        Error::Numerical {
            message: message.into(),
            iteration: Some(iteration),
        }
    }

    /// Prefixes a numerical error with the outer iteration of the fitter.
    pub(crate) fn in_outer_iteration(self, outer: usize) -> Self {
        match self {
            Error::Numerical { message, iteration } => Error::Numerical {
                message: match iteration {
                    Some(inner) => format!("outer iteration {outer}, inner iteration {inner}: {message}"),
                    None => format!("outer iteration {outer}: {message}"),
                },
                iteration: Some(outer),
            },
            other => other,
        }
    }

    /// Short machine-readable category used by the CLI and the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Configuration(_) => "configuration",
            Error::Numerical { .. } => "numerical",
            Error::DegenerateSignal => "degenerate_signal",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
