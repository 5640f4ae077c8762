//! Message delivery and peer discovery between device processes.
//!
//! Two implementations share one contract: [`SimTransport`] runs every device
//! in one thread on a virtual clock, and [`TcpTransport`] gives each device its
//! own loopback listener on the wall clock. Both deliver every message exactly
//! once and in FIFO order per sender/receiver pair (unless a drop probability
//! is configured).

mod clock;
mod registry;
mod sim;
mod tcp;
pub(crate) mod wire;

pub use clock::{to_micros, Clock, ClockMode, VirtualClock, WallClock};
pub use registry::Registry;
pub use sim::{SimConfig, SimTransport, DEFAULT_LATENCY_S};
pub(crate) use tcp::Acceptor;
pub use tcp::{RegistryClient, RegistryServer, TcpTransport};

use thiserror::Error;

use crate::matching::ProviderAdvert;
use crate::protocol::{ProtocolError, ProtocolMessage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("device `{0}` already registered with a different address")]
    DuplicateDevice(String),
    #[error("device `{0}` is not registered")]
    NotRegistered(String),
    #[error("peer `{0}` is unreachable")]
    PeerUnreachable(String),
    #[error("the wall clock cannot be stepped")]
    WallClockNotSteppable,
    #[error("clock step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bad frame: {0}")]
    Frame(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// A device's transport identity. `address` is a mailbox name in simulated
/// mode and `host:port` over TCP.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub device_id: String,
    pub address: String,
}

impl Endpoint {
    pub fn new(device_id: impl Into<String>, address: impl Into<String>) -> Self {
        Self {
            device_id: device_id.into(),
            address: address.into(),
        }
    }

    /// Simulated endpoint whose mailbox is named after the device.
    pub fn simulated(device_id: &str) -> Self {
        Self::new(device_id, format!("sim:{device_id}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg: ProtocolMessage,
    pub received_at_s: f64,
}

pub trait Transport {
    fn mode(&self) -> ClockMode;

    fn now_s(&self) -> f64;

    fn register(&mut self, endpoint: &Endpoint) -> Result<(), TransportError>;

    fn deregister(&mut self, device_id: &str) -> Result<(), TransportError>;

    fn advertise(
        &mut self,
        endpoint: &Endpoint,
        advert: ProviderAdvert,
    ) -> Result<(), TransportError>;

    /// Snapshot of available providers.
    fn discover(&mut self, endpoint: &Endpoint) -> Result<Vec<ProviderAdvert>, TransportError>;

    fn lookup(&mut self, device_id: &str) -> Result<Endpoint, TransportError>;

    fn send(
        &mut self,
        from: &Endpoint,
        to: &Endpoint,
        msg: &ProtocolMessage,
    ) -> Result<(), TransportError>;

    /// Next message already delivered to `at`, if any. Never blocks.
    fn recv(&mut self, at: &Endpoint) -> Result<Option<Envelope>, TransportError>;
}
