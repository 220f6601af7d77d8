use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("stratum ({admin1}, {urban_rural}) has no units with positive domain weight")]
    NoDataInStratum { admin1: String, urban_rural: String },

    #[error("no {0} clusters in the national sample; supply an explicit phantom prior")]
    EmptyPriorClass(String),

    #[error("phantom repair not applicable: {0}")]
    RepairNotApplicable(String),

    #[error("variance still degenerate after augmentation for domain `{0}`; override the phantom prior")]
    DegenerateAfterFix(String),

    #[error("estimate on the boundary (p = {0}); logit transform undefined")]
    BoundaryEstimate(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SaeError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SaeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error is a data/validation problem rather than a numerical one.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            SaeError::Numerical(_) | SaeError::DegenerateAfterFix(_) | SaeError::BoundaryEstimate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SaeError>;
