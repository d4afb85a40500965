use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error(
        "I - M(mu) is numerically singular at |mu| = {mu_abs:.6}; invertibility is only guaranteed for |mu| < {radius:.6}"
    )]
    RegionViolation { mu_abs: f64, radius: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("k = {requested} violates the invertibility bound for R = {radius}; the minimum admissible k is {minimum}")]
    KTooSmall {
        requested: usize,
        minimum: usize,
        radius: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn field_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Field {
        field: field.into(),
        message: message.into(),
    }
}
