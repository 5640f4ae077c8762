//! Synchronized interval recording of both peers' batteries, trace alignment
//! and the session metrics (provider loss, consumer gain, energy loss).
//!
//! Records carry both the start tick and the terminal tick, so a session of
//! `N` charging ticks produces `N + 1` record pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::battery::BatteryState;
use crate::protocol::{SessionState, SessionStatus, TerminalReason};
use crate::transport::{Clock, ClockMode};

pub const TRACE_CSV_HEADER: &str = "tick_index,wall_time_s,session_id,device_id,role,battery_level_pct,battery_charge_mah,cumulative_transferred_mah";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("recording interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error("session is not active (state {0})")]
    SessionNotActive(SessionStatus),
    #[error("misaligned traces, unpaired ticks {missing:?}")]
    MisalignedTraces { missing: Vec<u64> },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace invariant violated: {0}")]
    Invariant(String),
    #[error("trace csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Provider,
    Consumer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Provider => "provider",
            Role::Consumer => "consumer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = MonitorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "provider" => Ok(Role::Provider),
            "consumer" => Ok(Role::Consumer),
            other => Err(MonitorError::Csv(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    interval_s: f64,
}

impl MonitorConfig {
    pub fn new(interval_s: f64) -> Result<Self, MonitorError> {
        if interval_s.is_finite() && interval_s > 0.0 {
            Ok(Self { interval_s })
        } else {
            Err(MonitorError::InvalidInterval(interval_s))
        }
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub session_id: String,
    pub tick_index: u64,
    pub wall_time_s: f64,
    pub device_id: String,
    pub role: Role,
    pub battery_level_pct: f64,
    pub battery_charge_mah: f64,
    /// `mah_out` to date for the provider, `mah_in` to date for the consumer.
    pub cumulative_transferred_mah: f64,
}

impl MonitorRecord {
    pub fn capture(
        session_id: &str,
        tick_index: u64,
        wall_time_s: f64,
        device_id: &str,
        role: Role,
        battery: &BatteryState,
        cumulative_transferred_mah: f64,
    ) -> Self {
        Self {
            session_id: session_id.to_string(),
            tick_index,
            wall_time_s,
            device_id: device_id.to_string(),
            role,
            battery_level_pct: battery.level_pct(),
            battery_charge_mah: battery.charge_mah(),
            cumulative_transferred_mah,
        }
    }

    fn charge_or_from_level(&self, capacity_mah: f64) -> f64 {
        if self.battery_charge_mah.is_finite() {
            self.battery_charge_mah
        } else {
            self.battery_level_pct / 100.0 * capacity_mah
        }
    }
}

/// Provider and consumer records for the same tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePair {
    pub provider: MonitorRecord,
    pub consumer: MonitorRecord,
}

impl TracePair {
    pub fn tick_index(&self) -> u64 {
        self.consumer.tick_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacities {
    pub provider_mah: f64,
    pub consumer_mah: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionMetrics {
    pub provider_loss_mah: f64,
    pub consumer_gain_mah: f64,
    pub energy_loss_mah: f64,
    pub duration_s: f64,
    pub terminal_reason: Option<TerminalReason>,
}

impl SessionMetrics {
    pub fn with_reason(mut self, reason: TerminalReason) -> Self {
        self.terminal_reason = Some(reason);
        self
    }
}

/// Timestamp source for one session's ticks.
#[derive(Debug, Clone)]
pub struct SessionMonitor {
    config: MonitorConfig,
    session_start_s: f64,
    next_tick: u64,
}

impl SessionMonitor {
    pub fn new(config: MonitorConfig, session_start_s: f64) -> Self {
        Self {
            config,
            session_start_s,
            next_tick: 0,
        }
    }

    pub fn config(&self) -> MonitorConfig {
        self.config
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    /// Scheduled time of tick `tick_index`.
    pub fn scheduled_s(&self, tick_index: u64) -> f64 {
        self.session_start_s + tick_index as f64 * self.config.interval_s
    }

    /// Timestamp to stamp on a record taken now: the exact schedule on a
    /// virtual clock, the actual reading on the wall clock.
    pub fn stamp(&self, mode: ClockMode, now_s: f64, tick_index: u64) -> f64 {
        match mode {
            ClockMode::Virtual => self.scheduled_s(tick_index),
            ClockMode::Wall => now_s,
        }
    }

    /// Records both peers at the next tick with a shared index and timestamp.
    pub fn record_tick(
        &mut self,
        clock: &Clock,
        session: &SessionState,
        provider: &BatteryState,
        consumer: &BatteryState,
        cumulative_out_mah: f64,
        cumulative_in_mah: f64,
    ) -> Result<TracePair, MonitorError> {
        if !matches!(
            session.status,
            SessionStatus::Charging | SessionStatus::Completed | SessionStatus::Aborted
        ) {
            return Err(MonitorError::SessionNotActive(session.status));
        }
        let tick = self.next_tick;
        let wall = self.stamp(clock.mode(), clock.now_s(), tick);
        self.next_tick += 1;
        Ok(TracePair {
            provider: MonitorRecord::capture(
                &session.session_id,
                tick,
                wall,
                &session.provider_id,
                Role::Provider,
                provider,
                cumulative_out_mah,
            ),
            consumer: MonitorRecord::capture(
                &session.session_id,
                tick,
                wall,
                &session.request.consumer_id,
                Role::Consumer,
                consumer,
                cumulative_in_mah,
            ),
        })
    }
}

/// Pairs records by tick index; any tick present on one side only is reported.
pub fn align_traces(
    provider_records: &[MonitorRecord],
    consumer_records: &[MonitorRecord],
) -> Result<Vec<TracePair>, MonitorError> {
    let index = |records: &[MonitorRecord]| {
        let mut map = BTreeMap::new();
        let mut dup = Vec::new();
        for r in records {
            if map.insert(r.tick_index, r.clone()).is_some() {
                dup.push(r.tick_index);
            }
        }
        (map, dup)
    };
    let (mut providers, mut missing) = index(provider_records);
    let (mut consumers, dup) = index(consumer_records);
    missing.extend(dup);

    let ticks: Vec<u64> = providers
        .keys()
        .chain(consumers.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut pairs = Vec::with_capacity(ticks.len());
    for tick in ticks {
        match (providers.remove(&tick), consumers.remove(&tick)) {
            (Some(provider), Some(consumer)) => pairs.push(TracePair { provider, consumer }),
            _ => missing.push(tick),
        }
    }
    if missing.is_empty() {
        Ok(pairs)
    } else {
        missing.sort_unstable();
        missing.dedup();
        Err(MonitorError::MisalignedTraces { missing })
    }
}

/// Longest prefix of ticks `0..k` present on both sides.
pub fn aligned_prefix(
    provider_records: &[MonitorRecord],
    consumer_records: &[MonitorRecord],
) -> Vec<TracePair> {
    let providers: BTreeMap<u64, &MonitorRecord> =
        provider_records.iter().map(|r| (r.tick_index, r)).collect();
    let consumers: BTreeMap<u64, &MonitorRecord> =
        consumer_records.iter().map(|r| (r.tick_index, r)).collect();
    (0u64..)
        .map_while(|t| match (providers.get(&t), consumers.get(&t)) {
            (Some(p), Some(c)) => Some(TracePair {
                provider: (*p).clone(),
                consumer: (*c).clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Metrics between the first and last pair. Charges come from the records;
/// percent-only records (NaN charge) are converted through `capacities`.
pub fn compute_metrics(
    pairs: &[TracePair],
    capacities: &Capacities,
) -> Result<SessionMetrics, MonitorError> {
    let (first, last) = match (pairs.first(), pairs.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(MonitorError::EmptyTrace),
    };
    let p = |r: &MonitorRecord| r.charge_or_from_level(capacities.provider_mah);
    let c = |r: &MonitorRecord| r.charge_or_from_level(capacities.consumer_mah);
    let provider_loss_mah = p(&first.provider) - p(&last.provider);
    let consumer_gain_mah = c(&last.consumer) - c(&first.consumer);
    Ok(SessionMetrics {
        provider_loss_mah,
        consumer_gain_mah,
        energy_loss_mah: provider_loss_mah - consumer_gain_mah,
        duration_s: last.consumer.wall_time_s - first.consumer.wall_time_s,
        terminal_reason: None,
    })
}

/// Record pairs produced by a duration session of `duration_s` at `interval_s`.
pub fn expected_record_pairs(duration_s: f64, interval_s: f64) -> u64 {
    crate::battery::ticks_to_reach(duration_s, interval_s).unwrap_or(0) + 1
}

/// Checks density, role/session consistency and timestamp synchrony.
pub fn check_trace(
    pairs: &[TracePair],
    interval_s: f64,
    mode: ClockMode,
) -> Result<(), MonitorError> {
    let fail = |m: String| Err(MonitorError::Invariant(m));
    let Some(first) = pairs.first() else {
        return Err(MonitorError::EmptyTrace);
    };
    let start = first.consumer.wall_time_s;
    for (i, pair) in pairs.iter().enumerate() {
        let (p, c) = (&pair.provider, &pair.consumer);
        if p.tick_index != i as u64 || c.tick_index != i as u64 {
            return fail(format!("tick index gap at position {i}"));
        }
        if p.role != Role::Provider || c.role != Role::Consumer {
            return fail(format!("wrong roles at tick {i}"));
        }
        if p.session_id != first.provider.session_id || c.session_id != first.provider.session_id {
            return fail(format!("mixed session ids at tick {i}"));
        }
        if p.device_id != first.provider.device_id || c.device_id != first.consumer.device_id {
            return fail(format!("mixed device ids at tick {i}"));
        }
        let scheduled = start + i as f64 * interval_s;
        let ok = match mode {
            ClockMode::Virtual => {
                p.wall_time_s == c.wall_time_s
                    && (c.wall_time_s - scheduled).abs() <= 1e-9 * scheduled.abs().max(1.0)
            }
            ClockMode::Wall => {
                (p.wall_time_s - c.wall_time_s).abs() <= interval_s / 2.0
                    && (c.wall_time_s - scheduled).abs() <= interval_s / 2.0
            }
        };
        if !ok {
            return fail(format!("timestamps out of sync at tick {i}"));
        }
    }
    Ok(())
}

/// Serializes records, one row each, provider before consumer within a tick.
pub fn trace_csv(pairs: &[TracePair]) -> String {
    let records = pairs.iter().flat_map(|p| [&p.provider, &p.consumer]);
    records_csv(records)
}

pub fn records_csv<'a>(records: impl IntoIterator<Item = &'a MonitorRecord>) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(TRACE_CSV_HEADER.split(','))
        .expect("write to memory");
    for r in records {
        w.write_record([
            r.tick_index.to_string(),
            r.wall_time_s.to_string(),
            r.session_id.clone(),
            r.device_id.clone(),
            r.role.to_string(),
            r.battery_level_pct.to_string(),
            r.battery_charge_mah.to_string(),
            r.cumulative_transferred_mah.to_string(),
        ])
        .expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii csv")
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<MonitorRecord>, MonitorError> {
    let err = |e: String| MonitorError::Csv(e);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_CSV_HEADER {
        return Err(err("unexpected header".into()));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| err(format!("bad number `{s}`")))
    };
    reader
        .records()
        .map(|row| {
            let row = row.map_err(|e| err(e.to_string()))?;
            if row.len() != 8 {
                return Err(err(format!("expected 8 fields, found {}", row.len())));
            }
            Ok(MonitorRecord {
                tick_index: row[0]
                    .parse()
                    .map_err(|_| err(format!("bad tick `{}`", &row[0])))?,
                wall_time_s: num(&row[1])?,
                session_id: row[2].to_string(),
                device_id: row[3].to_string(),
                role: row[4].parse()?,
                battery_level_pct: num(&row[5])?,
                battery_charge_mah: num(&row[6])?,
                cumulative_transferred_mah: num(&row[7])?,
            })
        })
        .collect()
}

/// Splits records by role and pairs them.
pub fn pair_records(records: &[MonitorRecord]) -> Result<Vec<TracePair>, MonitorError> {
    let (providers, consumers): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| r.role == Role::Provider);
    align_traces(&providers, &consumers)
}
