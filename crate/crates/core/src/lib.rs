//! Peer-to-peer wireless energy sharing among IoT devices in a confined area.
//!
//! A consumer discovers nearby providers, requests an amount or a duration of
//! charge, and the closest willing provider transfers energy while both peers
//! record synchronized battery readings. Completed sessions are uploaded to an
//! edge service.
//!
//! - [`battery`]: charge accounting, transfer technologies, closed-form oracle
//! - [`protocol`]: requests, wire messages, the session state machine
//! - [`matching`]: closest-provider selection and the reject walk
//! - [`transport`]: simulated (virtual clock) and TCP (wall clock) transports
//! - [`monitor`]: per-tick records, alignment, metrics, trace CSV
//! - [`edge`]: persistent session store and its TCP service
//! - [`scenario`]: scenario files, scripted agents, run drivers, comparison
//!
//! The battery and matching math is generic over [`scalar::Scalar`] (`f32` or
//! `f64`); the aliases below fix it to `f64`.

pub mod battery;
pub mod edge;
pub mod matching;
pub mod monitor;
pub mod protocol;
pub mod scalar;
pub mod scenario;
pub mod transport;

pub type BatteryState = battery::BatteryState<f64>;
pub type TechnologyParams = battery::TechnologyParams<f64>;
pub type DrainParams = battery::DrainParams<f64>;
pub type TransferTick = battery::TransferTick<f64>;
pub type Prediction = battery::Prediction<f64>;
pub type Position = matching::Position<f64>;
pub type ProviderAdvert = matching::ProviderAdvert<f64>;

pub use battery::Technology;
pub use protocol::{ProtocolMessage, RequestKind, SessionState, TerminalReason};
pub use scenario::{parse_scenario, run_scenario, Scenario};
