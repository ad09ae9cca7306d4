use thiserror::Error;

/// Engine-wide error type.
///
/// Variants are grouped by how callers should react: `Config`/`Data`/
/// `NotFound` are problems with user-supplied inputs, the rest are runtime
/// failures inside a pipeline stage.
#[derive(Debug, Error)]
pub enum EngineError {
    /// Invalid or unparseable engine configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (files, snapshots, models).
    #[error("data error: {0}")]
    Data(String),

    /// A requested entity (e.g. user id) does not exist in the snapshot.
    #[error("not found: {0}")]
    NotFound(String),

    /// A cnle/1 message violated the protocol contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The remote evaluator could not be reached after retries.
    #[error("evaluator unavailable: {0}")]
    Evaluator(String),

    /// Training failed (e.g. divergence).
    #[error("training error: {0}")]
    Training(String),

    /// An internal API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// I/O failure with the operation that caused it.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl EngineError {
    /// Helper for `map_err` at I/O call sites.
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> EngineError {
        let context = context.into();
        move |source| EngineError::Io { context, source }
    }

    /// The pipeline stage (or input class) this error is attributed to,
    /// used by the serving layer to label 500 responses.
    pub fn stage(&self) -> &'static str {
        match self {
            EngineError::Config(_) => "config",
            EngineError::Data(_) | EngineError::NotFound(_) => "data",
            EngineError::Protocol(_) | EngineError::Evaluator(_) => "cnle",
            EngineError::Training(_) | EngineError::Contract(_) => "vans",
            EngineError::Io { .. } => "io",
        }
    }
}
