//! Energy-service session protocol: requests, the message vocabulary and its
//! single-line wire encoding, and the provider/consumer session state machine.

mod message;
mod request;
mod session;

pub use message::{ProtocolMessage, TerminalReason};
pub use request::{make_request, validate_id, Demand, EnergyRequest, IdGen, RequestKind};
pub use session::{Completion, SessionBook, SessionState, SessionStatus};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("request value must be positive and finite, got {0}")]
    InvalidRequestValue(f64),
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("illegal transition from {state} on {event}")]
    IllegalTransition { state: SessionStatus, event: String },
    #[error("message for `{got}` does not correlate to session `{expected}`")]
    Uncorrelated { expected: String, got: String },
    #[error("session is not charging (state {0})")]
    NotCharging(SessionStatus),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("malformed message: {0}")]
    Decode(String),
}
