use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate feature: row {row} has zero norm before normalization")]
    DegenerateFeature { row: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("backward called without a matching forward pass: {0}")]
    NoMatchingForward(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that arise while computing (NaN losses, degenerate
    /// features) rather than from bad inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateFeature { .. } | Error::NonFinite(_) | Error::Numerical(_)
        )
    }
}
