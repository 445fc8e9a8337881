//! Crate-wide error type with distinct variants per failure class.

use std::fmt;

#[derive(Debug)]
pub enum CstError {
    /// A constructor or operation received parameters violating its contract.
    InvalidParameter(String),
    /// File began with an unrecognized magic string.
    MagicMismatch { found: [u8; 8] },
    /// Payload shorter than the header-declared element count.
    TruncatedPayload { expected_bytes: usize, got_bytes: usize },
    /// Header-declared dimensions conflict with payload or each other.
    DimensionMismatch(String),
    /// Header JSON missing or malformed.
    HeaderError(String),
    /// A file of one stage kind was passed where another was required.
    StageMismatch { expected: &'static str, found: String },
    /// Iterative solver residual grew 10x from its running minimum.
    Divergence(String),
    /// A computation produced a non-finite value where one is not allowed.
    NonFinite(String),
    /// Support mask is empty where a non-empty one is required.
    EmptySupport,
    /// A tangency curve or probe set is empty.
    EmptyCurve,
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for CstError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CstError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            CstError::MagicMismatch { found } => {
                write!(f, "magic mismatch: found {:?}", String::from_utf8_lossy(found))
            }
            CstError::TruncatedPayload { expected_bytes, got_bytes } => write!(
                f,
                "truncated payload: expected {expected_bytes} bytes, got {got_bytes}"
            ),
            CstError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            CstError::HeaderError(msg) => write!(f, "header error: {msg}"),
            CstError::StageMismatch { expected, found } => {
                write!(f, "stage mismatch: expected {expected} file, found {found}")
            }
            CstError::Divergence(msg) => write!(f, "iteration diverged: {msg}"),
            CstError::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            CstError::EmptySupport => write!(f, "support mask is empty"),
            CstError::EmptyCurve => write!(f, "tangency curve / probe set is empty"),
            CstError::Io(e) => write!(f, "i/o error: {e}"),
            CstError::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for CstError {}

impl From<std::io::Error> for CstError {
    fn from(e: std::io::Error) -> Self {
        CstError::Io(e)
    }
}

impl From<serde_json::Error> for CstError {
    fn from(e: serde_json::Error) -> Self {
        CstError::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, CstError>;
