use std::fmt;
use std::str::FromStr;

use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestKind {
    /// A quantity of charge, in mAh.
    Amount,
    /// A charging period, in seconds.
    Duration,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Amount => "amount",
            RequestKind::Duration => "duration",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "amount" => Ok(RequestKind::Amount),
            "duration" => Ok(RequestKind::Duration),
            other => Err(ProtocolError::Decode(format!(
                "unknown request kind `{other}`"
            ))),
        }
    }
}

/// What the consumer asks for. Exactly one quantity, tied to the kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand {
    Amount { mah: f64 },
    Duration { seconds: f64 },
}

impl Demand {
    pub fn new(kind: RequestKind, value: f64) -> Result<Self, ProtocolError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(ProtocolError::InvalidRequestValue(value));
        }
        Ok(match kind {
            RequestKind::Amount => Demand::Amount { mah: value },
            RequestKind::Duration => Demand::Duration { seconds: value },
        })
    }

    pub fn kind(&self) -> RequestKind {
        match self {
            Demand::Amount { .. } => RequestKind::Amount,
            Demand::Duration { .. } => RequestKind::Duration,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Demand::Amount { mah } => mah,
            Demand::Duration { seconds } => seconds,
        }
    }

    pub fn amount_mah(&self) -> Option<f64> {
        match *self {
            Demand::Amount { mah } => Some(mah),
            Demand::Duration { .. } => None,
        }
    }

    pub fn duration_s(&self) -> Option<f64> {
        match *self {
            Demand::Duration { seconds } => Some(seconds),
            Demand::Amount { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRequest {
    pub request_id: String,
    pub consumer_id: String,
    pub demand: Demand,
}

impl EnergyRequest {
    pub fn kind(&self) -> RequestKind {
        self.demand.kind()
    }
}

/// Identifiers travel inside space-separated wire lines, CSV rows and
/// directory names, so they are restricted to a conservative character set.
pub fn validate_id(id: &str) -> Result<(), ProtocolError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '~'));
    if ok {
        Ok(())
    } else {
        Err(ProtocolError::InvalidId(id.to_string()))
    }
}

/// Deterministic source of fresh request ids.
#[derive(Debug, Clone)]
pub struct IdGen {
    prefix: String,
    next: u64,
}

impl IdGen {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
            next: 1,
        }
    }

    pub fn next_id(&mut self) -> String {
        let id = format!("{}-r{}", self.prefix, self.next);
        self.next += 1;
        id
    }
}

pub fn make_request(
    ids: &mut IdGen,
    kind: RequestKind,
    value: f64,
    consumer_id: &str,
) -> Result<EnergyRequest, ProtocolError> {
    validate_id(consumer_id)?;
    let demand = Demand::new(kind, value)?;
    let request_id = ids.next_id();
    validate_id(&request_id)?;
    Ok(EnergyRequest {
        request_id,
        consumer_id: consumer_id.to_string(),
        demand,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amount_request() {
        let mut ids = IdGen::new("t");
        let r = make_request(&mut ids, RequestKind::Amount, 1000.0, "pixel3").unwrap();
        assert_eq!(r.demand.amount_mah(), Some(1000.0));
        assert_eq!(r.demand.duration_s(), None);
    }

    #[test]
    fn duration_request() {
        let mut ids = IdGen::new("t");
        let r = make_request(&mut ids, RequestKind::Duration, 600.0, "pixel3").unwrap();
        assert_eq!(r.demand.duration_s(), Some(600.0));
        assert_eq!(r.demand.amount_mah(), None);
    }

    #[test]
    fn zero_and_non_finite_rejected() {
        let mut ids = IdGen::new("t");
        for v in [0.0, -5.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                make_request(&mut ids, RequestKind::Amount, v, "c"),
                Err(ProtocolError::InvalidRequestValue(_))
            ));
        }
    }

    #[test]
    fn ids_are_fresh() {
        let mut ids = IdGen::new("t");
        let a = make_request(&mut ids, RequestKind::Amount, 1.0, "c").unwrap();
        let b = make_request(&mut ids, RequestKind::Amount, 1.0, "c").unwrap();
        assert_ne!(a.request_id, b.request_id);
    }

    #[test]
    fn id_charset() {
        assert!(validate_id("pixel-5_a:1").is_ok());
        for bad in ["", "a b", "a=b", "a,b", "a/b", ".."] {
            assert!(validate_id(bad).is_err(), "{bad}");
        }
    }
}
