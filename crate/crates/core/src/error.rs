use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("optimization failed: {message}")]
    Optimization { message: String, trace: Vec<String> },

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("covariance error: {message} (eigenvalues {eigenvalues:?})")]
    Covariance { message: String, eigenvalues: Vec<f64> },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("study error: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Optimization { .. } => "optimization",
            Error::Sampler(_) => "sampler",
            Error::Diagnostic(_) => "diagnostic",
            Error::Covariance { .. } => "covariance",
            Error::Metric(_) => "metric",
            Error::Ingestion { .. } => "ingestion",
            Error::Study(_) => "study",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
