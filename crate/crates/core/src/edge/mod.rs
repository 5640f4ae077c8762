//! Edge service-management system for a confined area: receives session
//! datasets after a session ends, persists them and answers queries.

mod dataset;
mod server;
mod store;

pub use dataset::{digest_of, DatasetSummary, SessionDataset, META_FORMAT, METRIC_RTOL};
pub use server::{EdgeClient, EdgeServer};
pub use store::{EdgeStore, Receipt};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdgeError {
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("conflicting dataset for session `{0}`")]
    ConflictingSession(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl EdgeError {
    pub fn code(&self) -> &'static str {
        match self {
            EdgeError::ValidationFailed(_) => "ValidationFailed",
            EdgeError::ConflictingSession(_) => "ConflictingSession",
            EdgeError::NotFound(_) => "NotFound",
            EdgeError::Malformed(_) => "Malformed",
            EdgeError::Io(_) => "Io",
        }
    }

    fn detail(&self) -> &str {
        match self {
            EdgeError::ValidationFailed(d)
            | EdgeError::ConflictingSession(d)
            | EdgeError::NotFound(d)
            | EdgeError::Malformed(d)
            | EdgeError::Io(d) => d,
        }
    }

    fn from_wire(code: &str, detail: String) -> Self {
        match code {
            "ValidationFailed" => EdgeError::ValidationFailed(detail),
            "ConflictingSession" => EdgeError::ConflictingSession(detail),
            "NotFound" => EdgeError::NotFound(detail),
            "Malformed" => EdgeError::Malformed(detail),
            _ => EdgeError::Io(detail),
        }
    }
}

impl From<std::io::Error> for EdgeError {
    fn from(e: std::io::Error) -> Self {
        EdgeError::Io(e.to_string())
    }
}
