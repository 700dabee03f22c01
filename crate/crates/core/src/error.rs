use thiserror::Error;

/// Errors raised across the estimation and testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: non-numeric value `{value}` in column `{column}`")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },

    #[error("line {line}: probability out of range ({value})")]
    ProbabilityOutOfRange { line: u64, value: f64 },

    #[error("line {line}: nonpositive numeraire ({value}) under log transform")]
    NonPositiveNumeraire { line: u64, value: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rank-deficient design: collinear columns {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("degenerate normalization at tau = {0}")]
    DegenerateNormalization(f64),

    #[error("quantile level {level}: {source}")]
    AtLevel {
        level: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bootstrap failed: {failed} of {total} replicates could not be estimated")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("covariance factorization failed even with ridge {0}")]
    Factorization(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// True when the error stems from user input or configuration rather than
    /// an internal failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::NonNumeric { .. }
            | Error::ProbabilityOutOfRange { .. }
            | Error::NonPositiveNumeraire { .. }
            | Error::InvalidDataset(_)
            | Error::InvalidConfig(_)
            | Error::DegenerateNormalization(_)
            | Error::RankDeficient { .. } => true,
            Error::AtLevel { source, .. } | Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
