use std::path::PathBuf;

/// Failures of the file-level and command layer, mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Model {
        context: String,
        #[source]
        source: vfm_core::Error,
    },

    /// Some wells failed; the others completed.
    #[error("{failed} of {total} units failed")]
    Partial { failed: usize, total: usize, diverged: bool },
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        AppError::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub fn model(context: impl Into<String>, source: vfm_core::Error) -> Self {
        AppError::Model {
            context: context.into(),
            source,
        }
    }

    /// 0 success, 1 usage, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Model {
                source: vfm_core::Error::Diverged { .. },
                ..
            } => 3,
            AppError::Model {
                source: vfm_core::Error::Invalid { .. },
                ..
            } => 1,
            AppError::Partial { diverged: true, .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
