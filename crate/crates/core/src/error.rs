use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("response-type space has {count} elements, exceeding the cap of {cap}")]
    TooManyResponseTypes { count: u128, cap: usize },

    #[error("unknown catalog restriction `{0}`")]
    UnknownCatalog(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label `{label}` is not in the declared {axis} support")]
    UnknownLabel { axis: &'static str, label: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("instrument value `{0}` never appears in the data")]
    UnseenInstrument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("model is inconsistent with the observed distribution: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
