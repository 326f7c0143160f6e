use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Numerical search stopped without meeting its tolerance. `best` holds the
    /// best parameters found so callers can still inspect or reuse them.
    #[error("{what} did not converge (best value {value})")]
    NotConverged {
        what: String,
        best: Vec<f64>,
        value: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("empty response")]
    EmptyResponse,

    #[error("http: {0}")]
    Http(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wrap an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
