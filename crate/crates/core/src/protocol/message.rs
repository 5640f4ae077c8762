use std::fmt;
use std::str::FromStr;

use super::request::{validate_id, Demand, EnergyRequest, RequestKind};
use super::ProtocolError;

/// Closed set of reasons a session reaches a terminal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalReason {
    AmountDelivered,
    DurationElapsed,
    ProviderDepleted,
    ConsumerCancelled,
    TransportLost,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::AmountDelivered => "AmountDelivered",
            TerminalReason::DurationElapsed => "DurationElapsed",
            TerminalReason::ProviderDepleted => "ProviderDepleted",
            TerminalReason::ConsumerCancelled => "ConsumerCancelled",
            TerminalReason::TransportLost => "TransportLost",
        }
    }

    /// True for the reasons that end a session in `Completed`.
    pub fn is_completion(self) -> bool {
        matches!(
            self,
            TerminalReason::AmountDelivered | TerminalReason::DurationElapsed
        )
    }
}

impl fmt::Display for TerminalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerminalReason {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "AmountDelivered" => TerminalReason::AmountDelivered,
            "DurationElapsed" => TerminalReason::DurationElapsed,
            "ProviderDepleted" => TerminalReason::ProviderDepleted,
            "ConsumerCancelled" => TerminalReason::ConsumerCancelled,
            "TransportLost" => TerminalReason::TransportLost,
            other => return Err(ProtocolError::Decode(format!("unknown reason `{other}`"))),
        })
    }
}

/// Messages exchanged between a consumer and a provider.
///
/// Wire form is a single line `MSGTYPE field=value ...` with fields in the
/// order listed in `docs/wire-format.md`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    Request {
        request: EnergyRequest,
        position: (f64, f64),
    },
    Accept {
        request_id: String,
    },
    Reject {
        request_id: String,
    },
    StartTransfer {
        session_id: String,
        interval_s: f64,
    },
    MonitorSync {
        session_id: String,
        tick_index: u64,
        wall_time_s: f64,
    },
    Complete {
        session_id: String,
        reason: TerminalReason,
    },
    Abort {
        session_id: String,
        reason: TerminalReason,
    },
}

impl ProtocolMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ProtocolMessage::Request { .. } => "REQUEST",
            ProtocolMessage::Accept { .. } => "ACCEPT",
            ProtocolMessage::Reject { .. } => "REJECT",
            ProtocolMessage::StartTransfer { .. } => "START_TRANSFER",
            ProtocolMessage::MonitorSync { .. } => "MONITOR_SYNC",
            ProtocolMessage::Complete { .. } => "COMPLETE",
            ProtocolMessage::Abort { .. } => "ABORT",
        }
    }

    /// Request id for request-phase messages.
    pub fn request_id(&self) -> Option<&str> {
        match self {
            ProtocolMessage::Request { request, .. } => Some(&request.request_id),
            ProtocolMessage::Accept { request_id } | ProtocolMessage::Reject { request_id } => {
                Some(request_id)
            }
            _ => None,
        }
    }

    /// Session id for session-phase messages.
    pub fn session_id(&self) -> Option<&str> {
        match self {
            ProtocolMessage::StartTransfer { session_id, .. }
            | ProtocolMessage::MonitorSync { session_id, .. }
            | ProtocolMessage::Complete { session_id, .. }
            | ProtocolMessage::Abort { session_id, .. } => Some(session_id),
            _ => None,
        }
    }

    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let mut tokens = line.split(' ');
        let kind = tokens.next().unwrap_or_default();
        let mut fields = Fields { tokens };
        let msg = match kind {
            "REQUEST" => {
                let request_id = fields.id("request_id")?;
                let consumer_id = fields.id("consumer_id")?;
                let kind: RequestKind = fields.take("kind")?.parse()?;
                let value = fields.float("value")?;
                let x = fields.float("x")?;
                let y = fields.float("y")?;
                ProtocolMessage::Request {
                    request: EnergyRequest {
                        request_id,
                        consumer_id,
                        demand: Demand::new(kind, value)?,
                    },
                    position: (x, y),
                }
            }
            "ACCEPT" => ProtocolMessage::Accept {
                request_id: fields.id("request_id")?,
            },
            "REJECT" => ProtocolMessage::Reject {
                request_id: fields.id("request_id")?,
            },
            "START_TRANSFER" => ProtocolMessage::StartTransfer {
                session_id: fields.id("session_id")?,
                interval_s: fields.float("interval_s")?,
            },
            "MONITOR_SYNC" => ProtocolMessage::MonitorSync {
                session_id: fields.id("session_id")?,
                tick_index: fields
                    .take("tick_index")?
                    .parse()
                    .map_err(|e| ProtocolError::Decode(format!("tick_index: {e}")))?,
                wall_time_s: fields.float("wall_time_s")?,
            },
            "COMPLETE" => ProtocolMessage::Complete {
                session_id: fields.id("session_id")?,
                reason: fields.take("reason")?.parse()?,
            },
            "ABORT" => ProtocolMessage::Abort {
                session_id: fields.id("session_id")?,
                reason: fields.take("reason")?.parse()?,
            },
            other => return Err(ProtocolError::Decode(format!("unknown message `{other}`"))),
        };
        fields.finish()?;
        Ok(msg)
    }
}

struct Fields<'a> {
    tokens: std::str::Split<'a, char>,
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Result<&'a str, ProtocolError> {
        let token = self
            .tokens
            .next()
            .ok_or_else(|| ProtocolError::Decode(format!("missing field `{key}`")))?;
        match token.split_once('=') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(ProtocolError::Decode(format!(
                "expected field `{key}`, found `{token}`"
            ))),
        }
    }

    fn id(&mut self, key: &str) -> Result<String, ProtocolError> {
        let v = self.take(key)?;
        validate_id(v)?;
        Ok(v.to_string())
    }

    fn float(&mut self, key: &str) -> Result<f64, ProtocolError> {
        let v = self.take(key)?;
        let parsed: f64 = v
            .parse()
            .map_err(|_| ProtocolError::Decode(format!("`{key}` is not a number: `{v}`")))?;
        if parsed.is_finite() {
            Ok(parsed)
        } else {
            Err(ProtocolError::Decode(format!("`{key}` is not finite")))
        }
    }

    fn finish(mut self) -> Result<(), ProtocolError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(extra) => Err(ProtocolError::Decode(format!("unexpected field `{extra}`"))),
        }
    }
}

impl fmt::Display for ProtocolMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.type_name();
        match self {
            ProtocolMessage::Request { request, position } => write!(
                f,
                "{name} request_id={} consumer_id={} kind={} value={} x={} y={}",
                request.request_id,
                request.consumer_id,
                request.kind(),
                request.demand.value(),
                position.0,
                position.1
            ),
            ProtocolMessage::Accept { request_id } | ProtocolMessage::Reject { request_id } => {
                write!(f, "{name} request_id={request_id}")
            }
            ProtocolMessage::StartTransfer {
                session_id,
                interval_s,
            } => write!(f, "{name} session_id={session_id} interval_s={interval_s}"),
            ProtocolMessage::MonitorSync {
                session_id,
                tick_index,
                wall_time_s,
            } => write!(
                f,
                "{name} session_id={session_id} tick_index={tick_index} wall_time_s={wall_time_s}"
            ),
            ProtocolMessage::Complete { session_id, reason }
            | ProtocolMessage::Abort { session_id, reason } => {
                write!(f, "{name} session_id={session_id} reason={reason}")
            }
        }
    }
}
