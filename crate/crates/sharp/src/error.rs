use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SharpError {
    /// A config or CLI value that failed to parse or validate; `field` is the key as written.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] sharp_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("plot input {path}: {message}")]
    Plot { path: PathBuf, message: String },
}

impl SharpError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Core(sharp_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SharpError>;
