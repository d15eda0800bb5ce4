use thiserror::Error;

/// Errors produced by the model, scheme, and estimation layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("missing capability: {0}")]
    MissingCapability(String),

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error(
        "incompatible scheme/model pairing: scheme `{scheme}` cannot integrate model `{model}`"
    )]
    IncompatibleScheme { scheme: String, model: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
