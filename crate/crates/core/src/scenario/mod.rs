//! Experiment harness: scenario files, scripted agents on emulated hardware,
//! virtual- and wall-clock drivers, and run comparison.

mod agent;
mod bench;
mod compare;
mod config;
mod run;

pub use agent::{AgentTiming, ConsumerAgent, ConsumerOutcome, ProviderAgent};
pub use bench::{Ledger, PowerBench, ProviderSnapshot};
pub use compare::{
    compare, consumer_gain_per_minute_below_taper, load_run, Comparison, ComparisonRow,
    RunArtifact, REPORT_CSV_HEADER,
};
pub use config::{
    parse_scenario, parse_scenario_str, DeviceSpec, RequestSpec, Scenario, TransportSpec,
    DEFAULT_CONSUMER_CAPACITY_MAH, DEFAULT_CONSUMER_START_PCT, DEFAULT_INTERVAL_S,
    DEFAULT_MAX_SESSION_S, DEFAULT_OUTPUT_DIR, DEFAULT_PROVIDER_CAPACITY_MAH,
    DEFAULT_PROVIDER_START_PCT, DEFAULT_RESPONSE_TIMEOUT_S,
};
pub use run::{run_scenario, upload, write_run, RunOutcome, RunReport};

use thiserror::Error;

use crate::battery::BatteryError;
use crate::edge::EdgeError;
use crate::monitor::MonitorError;
use crate::protocol::ProtocolError;
use crate::transport::TransportError;

pub(crate) const META_FILE: &str = "meta.txt";
pub(crate) const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("{field}: {detail}")]
    Validation { field: String, detail: String },
    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e.to_string())
    }
}
