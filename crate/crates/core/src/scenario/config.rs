//! Scenario files: one `section.key = value` assignment per line.
//!
//! ```text
//! # experiment 1
//! scenario.name = exp1-wireless
//! scenario.seed = 7
//! scenario.clock = virtual          # virtual | wall
//! monitor.interval_s = 1
//! device.P1.role = provider
//! device.P1.start_level_pct = 100
//! device.P1.position = 0.02,0
//! device.C1.role = consumer
//! device.C1.start_level_pct = 40
//! technology.kind = wireless_distance
//! request.kind = duration
//! request.value = 1800
//! ```
//!
//! Blank lines and text after `#` are ignored. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::ScenarioError;
use crate::battery::{DrainParams, Technology, TechnologyParams};
use crate::matching::{Position, DEFAULT_ACCEPT_THRESHOLD_PCT};
use crate::monitor::Role;
use crate::protocol::{validate_id, Demand, RequestKind};
use crate::transport::{ClockMode, DEFAULT_LATENCY_S};

pub const DEFAULT_PROVIDER_CAPACITY_MAH: f64 = 4080.0;
pub const DEFAULT_CONSUMER_CAPACITY_MAH: f64 = 2915.0;
pub const DEFAULT_PROVIDER_START_PCT: f64 = 100.0;
pub const DEFAULT_CONSUMER_START_PCT: f64 = 40.0;
pub const DEFAULT_INTERVAL_S: f64 = 1.0;
pub const DEFAULT_RESPONSE_TIMEOUT_S: f64 = 1.0;
pub const DEFAULT_MAX_SESSION_S: f64 = 86_400.0;
pub const DEFAULT_OUTPUT_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub device_id: String,
    pub role: Role,
    pub capacity_mah: f64,
    pub start_level_pct: f64,
    pub position: Position,
    pub drain: DrainParams,
    /// Only meaningful for providers.
    pub accept_threshold_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestSpec {
    pub consumer_id: String,
    pub demand: Demand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSpec {
    pub latency_s: f64,
    pub drop_probability: f64,
    pub response_timeout_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub clock: ClockMode,
    /// Simulated seconds per real second. Virtual runs sleep only when set.
    pub pace: Option<f64>,
    pub interval_s: f64,
    pub max_session_s: f64,
    pub devices: Vec<DeviceSpec>,
    pub technology: TechnologyParams,
    pub request: RequestSpec,
    pub transport: TransportSpec,
    pub output_dir: PathBuf,
    pub edge_upload: Option<String>,
}

impl Scenario {
    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.device_id == id)
    }

    pub fn providers(&self) -> impl Iterator<Item = &DeviceSpec> {
        self.devices.iter().filter(|d| d.role == Role::Provider)
    }

    pub fn consumer(&self) -> &DeviceSpec {
        self.device(&self.request.consumer_id)
            .expect("validated scenario names its consumer")
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let fallback = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    parse_scenario_str(&text, fallback)
}

/// Parses scenario text; `default_name` is used when `scenario.name` is absent.
pub fn parse_scenario_str(text: &str, default_name: &str) -> Result<Scenario, ScenarioError> {
    let mut raw: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut device_order: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(
                n,
                format!("expected `key = value`, found `{line}`"),
            ));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(parse_err(n, "empty key or value".into()));
        }
        if let Some(rest) = key.strip_prefix("device.") {
            let Some((id, _)) = rest.rsplit_once('.') else {
                return Err(parse_err(
                    n,
                    format!("expected device.<id>.<field>, found `{key}`"),
                ));
            };
            if !device_order.iter().any(|d| d == id) {
                device_order.push(id.to_string());
            }
        }
        if raw
            .insert(key.to_string(), (n, value.to_string()))
            .is_some()
        {
            return Err(parse_err(n, format!("duplicate key `{key}`")));
        }
    }
    Builder { raw }.build(default_name, &device_order)
}

fn parse_err(line: usize, detail: String) -> ScenarioError {
    ScenarioError::Parse { line, detail }
}

fn invalid(field: &str, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        detail: detail.into(),
    }
}

struct Builder {
    raw: BTreeMap<String, (usize, String)>,
}

impl Builder {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.raw.remove(key)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| parse_err(line, format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.parsed::<f64>(key)? {
            Some(v) if !v.is_finite() => Err(invalid(key, "must be finite")),
            other => Ok(other),
        }
    }

    fn build(
        mut self,
        default_name: &str,
        device_order: &[String],
    ) -> Result<Scenario, ScenarioError> {
        let name = self
            .take("scenario.name")
            .map(|(_, v)| v)
            .unwrap_or_else(|| default_name.to_string());
        validate_id(&name).map_err(|e| invalid("scenario.name", e.to_string()))?;
        let seed = self.parsed::<u64>("scenario.seed")?.unwrap_or(0);
        let clock = match self.take("scenario.clock") {
            None => ClockMode::Virtual,
            Some((_, v)) if v == "virtual" => ClockMode::Virtual,
            Some((_, v)) if v == "wall" => ClockMode::Wall,
            Some((line, v)) => return Err(parse_err(line, format!("unknown clock `{v}`"))),
        };
        let pace = self.number("scenario.pace")?;
        if matches!(pace, Some(p) if p <= 0.0) {
            return Err(invalid("scenario.pace", "must be positive"));
        }
        let max_session_s = self
            .number("scenario.max_session_s")?
            .unwrap_or(DEFAULT_MAX_SESSION_S);
        if max_session_s <= 0.0 {
            return Err(invalid("scenario.max_session_s", "must be positive"));
        }
        let interval_s = self
            .number("monitor.interval_s")?
            .unwrap_or(DEFAULT_INTERVAL_S);
        if interval_s <= 0.0 {
            return Err(invalid("monitor.interval_s", "must be positive"));
        }

        let mut devices = Vec::new();
        for id in device_order {
            devices.push(self.device(id)?);
        }
        if !devices.iter().any(|d| d.role == Role::Provider) {
            return Err(invalid("device", "at least one provider is required"));
        }
        let consumers: Vec<&str> = devices
            .iter()
            .filter(|d| d.role == Role::Consumer)
            .map(|d| d.device_id.as_str())
            .collect();
        if consumers.is_empty() {
            return Err(invalid("device", "at least one consumer is required"));
        }

        let technology = self.technology()?;

        let kind = self
            .parsed::<RequestKind>("request.kind")?
            .ok_or_else(|| invalid("request.kind", "missing request"))?;
        let value = self
            .number("request.value")?
            .ok_or_else(|| invalid("request.value", "missing request"))?;
        let demand =
            Demand::new(kind, value).map_err(|e| invalid("request.value", e.to_string()))?;
        let consumer_id = match self.take("request.consumer") {
            Some((_, id)) if consumers.contains(&id.as_str()) => id,
            Some((_, id)) => {
                return Err(invalid(
                    "request.consumer",
                    format!("`{id}` is not a consumer"),
                ))
            }
            None if consumers.len() == 1 => consumers[0].to_string(),
            None => {
                return Err(invalid(
                    "request.consumer",
                    "required with several consumers",
                ))
            }
        };

        let latency_s = self
            .number("transport.latency_s")?
            .unwrap_or(DEFAULT_LATENCY_S);
        let drop_probability = self.number("transport.drop_probability")?.unwrap_or(0.0);
        let response_timeout_s = self
            .number("transport.response_timeout_s")?
            .unwrap_or(DEFAULT_RESPONSE_TIMEOUT_S);
        if latency_s < 0.0 {
            return Err(invalid("transport.latency_s", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&drop_probability) {
            return Err(invalid("transport.drop_probability", "must be in [0, 1]"));
        }
        if response_timeout_s <= 0.0 {
            return Err(invalid("transport.response_timeout_s", "must be positive"));
        }

        let output_dir = self
            .take("output.dir")
            .map(|(_, v)| PathBuf::from(v))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        let edge_upload = self.take("edge.upload").map(|(_, v)| v);

        if let Some((key, (line, _))) = self.raw.into_iter().next() {
            return Err(parse_err(line, format!("unknown key `{key}`")));
        }
        Ok(Scenario {
            name,
            seed,
            clock,
            pace,
            interval_s,
            max_session_s,
            devices,
            technology,
            request: RequestSpec {
                consumer_id,
                demand,
            },
            transport: TransportSpec {
                latency_s,
                drop_probability,
                response_timeout_s,
            },
            output_dir,
            edge_upload,
        })
    }

    fn device(&mut self, id: &str) -> Result<DeviceSpec, ScenarioError> {
        let key = |field: &str| format!("device.{id}.{field}");
        validate_id(id).map_err(|e| invalid(&key("role"), e.to_string()))?;
        let role = self
            .parsed::<Role>(&key("role"))?
            .ok_or_else(|| invalid(&key("role"), "missing role"))?;
        let (capacity, start) = match role {
            Role::Provider => (DEFAULT_PROVIDER_CAPACITY_MAH, DEFAULT_PROVIDER_START_PCT),
            Role::Consumer => (DEFAULT_CONSUMER_CAPACITY_MAH, DEFAULT_CONSUMER_START_PCT),
        };
        let capacity_mah = self.number(&key("capacity_mah"))?.unwrap_or(capacity);
        if capacity_mah <= 0.0 {
            return Err(invalid(&key("capacity_mah"), "must be positive"));
        }
        let start_level_pct = self.number(&key("start_level_pct"))?.unwrap_or(start);
        if !(0.0..=100.0).contains(&start_level_pct) {
            return Err(invalid(&key("start_level_pct"), "must be in [0, 100]"));
        }
        let position = match self.take(&key("position")) {
            None => Position::default(),
            Some((line, v)) => {
                let coords: Vec<Option<f64>> =
                    v.split(',').map(|c| c.trim().parse().ok()).collect();
                match coords[..] {
                    [Some(x), Some(y)] if x.is_finite() && y.is_finite() => Position::new(x, y),
                    _ => {
                        return Err(parse_err(
                            line,
                            format!("position must be `x,y`, found `{v}`"),
                        ))
                    }
                }
            }
        };
        let baseline = self
            .number(&key("baseline_ma"))?
            .unwrap_or(DrainParams::<f64>::default_device().baseline_ma);
        let drain =
            DrainParams::new(baseline).map_err(|e| invalid(&key("baseline_ma"), e.to_string()))?;
        let accept_threshold_pct = self
            .number(&key("accept_threshold_pct"))?
            .unwrap_or(DEFAULT_ACCEPT_THRESHOLD_PCT);
        Ok(DeviceSpec {
            device_id: id.to_string(),
            role,
            capacity_mah,
            start_level_pct,
            position,
            drain,
            accept_threshold_pct,
        })
    }

    fn technology(&mut self) -> Result<TechnologyParams, ScenarioError> {
        let kind = self
            .parsed::<Technology>("technology.kind")?
            .unwrap_or(Technology::WirelessDistance);
        let mut params = TechnologyParams::defaults(kind);
        if let Some(v) = self.number("technology.transfer_rate_ma")? {
            params.transfer_rate_ma = v;
        }
        if let Some(v) = self.number("technology.efficiency")? {
            params.efficiency = v;
        }
        if let Some(v) = self.number("technology.taper_start_pct")? {
            params.taper_start_pct = v;
        }
        if let Some(v) = self.number("technology.distance_m")? {
            params.distance_m = v;
        }
        params
            .validate()
            .map_err(|e| invalid("technology", e.to_string()))?;
        Ok(params)
    }
}
