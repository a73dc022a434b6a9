use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation (e.g. a CI requested
    /// with a single sample, or a confidence level of 1.0).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data that violates an invariant of the engine.
    #[error("data error: {0}")]
    Data(String),

    /// A prediction log line that could not be accepted.
    #[error("line {line}: {message}")]
    Log { line: usize, message: String },

    /// A failure while processing one record of a batch.
    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures of the underlying filesystem rather than of the
    /// content being processed.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Record { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
