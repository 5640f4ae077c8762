//! Scripted peers. Both are poll-driven: the caller delivers messages through
//! [`handle`](ConsumerAgent::handle) or [`poll`](ConsumerAgent::poll) and wakes
//! them no later than `next_wake_us`.

use std::collections::BTreeMap;

use super::bench::PowerBench;
use super::config::DeviceSpec;
use super::ScenarioError;
use crate::battery::BatteryError;
use crate::matching::{accepts_request, next_after_reject, rank_providers, ProviderAdvert};
use crate::monitor::{MonitorConfig, MonitorRecord, Role, SessionMonitor};
use crate::protocol::{
    Completion, Demand, EnergyRequest, IdGen, ProtocolMessage, SessionBook, SessionState,
    SessionStatus, TerminalReason,
};
use crate::transport::{to_micros, Endpoint, Transport, TransportError};

#[derive(Debug, Clone, PartialEq)]
pub enum ConsumerOutcome {
    NoProviderAvailable,
    Ended {
        session_id: String,
        provider_id: String,
        reason: TerminalReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentTiming {
    pub interval_s: f64,
    pub response_timeout_s: f64,
    pub max_session_s: f64,
}

#[derive(Debug)]
enum Phase {
    Discover,
    Awaiting {
        provider: Endpoint,
        deadline_us: u64,
    },
    Charging {
        provider: Endpoint,
        monitor: SessionMonitor,
        tick_index: u64,
        due_us: u64,
    },
    Done(ConsumerOutcome),
}

pub struct ConsumerAgent {
    endpoint: Endpoint,
    device: DeviceSpec,
    demand: Demand,
    ids: IdGen,
    bench: PowerBench,
    timing: AgentTiming,
    phase: Phase,
    ranking: Vec<String>,
    tried: Vec<String>,
    session: Option<SessionState>,
    records: Vec<MonitorRecord>,
}

impl ConsumerAgent {
    pub fn new(
        endpoint: Endpoint,
        device: DeviceSpec,
        demand: Demand,
        bench: PowerBench,
        timing: AgentTiming,
    ) -> Self {
        Self {
            ids: IdGen::new(device.device_id.clone()),
            endpoint,
            device,
            demand,
            bench,
            timing,
            phase: Phase::Discover,
            ranking: Vec::new(),
            tried: Vec::new(),
            session: None,
            records: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn outcome(&self) -> Option<&ConsumerOutcome> {
        match &self.phase {
            Phase::Done(o) => Some(o),
            _ => None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.outcome().is_some()
    }

    pub fn records(&self) -> &[MonitorRecord] {
        &self.records
    }

    pub fn session(&self) -> Option<&SessionState> {
        self.session.as_ref()
    }

    pub fn next_wake_us(&self) -> Option<u64> {
        match &self.phase {
            Phase::Discover => Some(0),
            Phase::Awaiting { deadline_us, .. } => Some(*deadline_us),
            Phase::Charging { due_us, .. } => Some(*due_us),
            Phase::Done(_) => None,
        }
    }

    /// Drains delivered messages, then runs any due timers.
    pub fn poll<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        while let Some(env) = net.recv(&self.endpoint)? {
            self.handle(net, &env.msg)?;
        }
        self.on_time(net)
    }

    pub fn handle<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        msg: &ProtocolMessage,
    ) -> Result<(), ScenarioError> {
        let Some(session) = &self.session else {
            return Ok(());
        };
        // anything that does not fit the current session is stale
        let Ok(next) = session.transition(msg) else {
            return Ok(());
        };
        match (&self.phase, msg) {
            (Phase::Awaiting { provider, .. }, ProtocolMessage::Accept { .. }) => {
                let provider = provider.clone();
                self.session = Some(next);
                self.start_transfer(net, provider)
            }
            (Phase::Awaiting { .. }, ProtocolMessage::Reject { .. }) => {
                self.session = Some(next);
                self.try_next(net)
            }
            (Phase::Charging { provider, .. }, ProtocolMessage::Abort { reason, .. }) => {
                let provider_id = provider.device_id.clone();
                self.session = Some(next);
                self.finish(provider_id, *reason);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn on_time<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        let now_us = to_micros(net.now_s());
        match &self.phase {
            Phase::Discover => {
                let adverts: Vec<ProviderAdvert> = net.discover(&self.endpoint)?;
                self.ranking = rank_providers(self.device.position, &adverts);
                self.try_next(net)
            }
            Phase::Awaiting { deadline_us, .. } if now_us >= *deadline_us => {
                // silence counts as a rejection
                self.try_next(net)
            }
            Phase::Charging { due_us, .. } if now_us >= *due_us => self.tick(net),
            _ => Ok(()),
        }
    }

    fn try_next<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        loop {
            let Ok(provider_id) = next_after_reject(&self.ranking, &self.tried) else {
                self.phase = Phase::Done(ConsumerOutcome::NoProviderAvailable);
                return Ok(());
            };
            self.tried.push(provider_id.clone());
            let Ok(provider) = net.lookup(&provider_id) else {
                continue;
            };
            let request = EnergyRequest {
                request_id: self.ids.next_id(),
                consumer_id: self.device.device_id.clone(),
                demand: self.demand,
            };
            let msg = ProtocolMessage::Request {
                request: request.clone(),
                position: (self.device.position.x, self.device.position.y),
            };
            let session = SessionState::new(request, &provider_id).transition(&msg)?;
            match net.send(&self.endpoint, &provider, &msg) {
                Ok(()) => {}
                Err(TransportError::PeerUnreachable(_)) => continue,
                Err(e) => return Err(e.into()),
            }
            self.session = Some(session);
            self.phase = Phase::Awaiting {
                provider,
                deadline_us: to_micros(net.now_s() + self.timing.response_timeout_s),
            };
            return Ok(());
        }
    }

    fn start_transfer<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        provider: Endpoint,
    ) -> Result<(), ScenarioError> {
        let session = self.session.take().expect("accepted session");
        let msg = ProtocolMessage::StartTransfer {
            session_id: session.session_id.clone(),
            interval_s: self.timing.interval_s,
        };
        let session = session.transition(&msg)?;
        self.bench.connect(
            &session.session_id,
            &provider.device_id,
            &self.device.device_id,
        );
        let sent = net.send(&self.endpoint, &provider, &msg);
        self.session = Some(session);
        if sent.is_err() {
            return self.abort(net, provider, TerminalReason::TransportLost);
        }
        // ticks fall on whole multiples of the interval
        let interval = self.timing.interval_s;
        let start_s = (net.now_s() / interval).ceil() * interval;
        let monitor = SessionMonitor::new(MonitorConfig::new(interval)?, start_s);
        self.phase = Phase::Charging {
            provider,
            monitor,
            tick_index: 0,
            due_us: to_micros(start_s),
        };
        Ok(())
    }

    fn tick<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        let Phase::Charging {
            provider,
            monitor,
            tick_index,
            ..
        } = &self.phase
        else {
            return Ok(());
        };
        let (provider, monitor, tick_index) = (provider.clone(), monitor.clone(), *tick_index);
        let mut session = self.session.take().expect("charging session");
        let interval = self.timing.interval_s;
        if tick_index > 0 {
            match self.bench.step(&session.session_id, interval) {
                Ok(t) => session = session.record_progress(t.mah_in, interval)?,
                Err(BatteryError::ProviderDepleted) => {
                    self.session = Some(session);
                    return self.abort(net, provider, TerminalReason::ProviderDepleted);
                }
                Err(e) => return Err(e.into()),
            }
        }
        let wall_time_s = monitor.stamp(net.mode(), net.now_s(), tick_index);
        let battery = self
            .bench
            .battery(&self.device.device_id)
            .expect("consumer on the bench");
        let cumulative = self
            .bench
            .ledger(&session.session_id)
            .map_or(0.0, |l| l.mah_in);
        self.records.push(MonitorRecord::capture(
            &session.session_id,
            tick_index,
            wall_time_s,
            &self.device.device_id,
            Role::Consumer,
            &battery,
            cumulative,
        ));
        let sync = ProtocolMessage::MonitorSync {
            session_id: session.session_id.clone(),
            tick_index,
            wall_time_s,
        };
        session = session.transition(&sync)?;
        let sent = net.send(&self.endpoint, &provider, &sync);
        self.session = Some(session);
        if sent.is_err() {
            return self.abort(net, provider, TerminalReason::TransportLost);
        }

        let session = self.session.as_ref().expect("charging session");
        if let Completion::Complete(reason) = session.is_complete()? {
            let msg = ProtocolMessage::Complete {
                session_id: session.session_id.clone(),
                reason,
            };
            self.session = Some(session.transition(&msg)?);
            // best effort: the provider times out on its own otherwise
            let _ = net.send(&self.endpoint, &provider, &msg);
            self.finish(provider.device_id, reason);
            return Ok(());
        }
        let stalled = battery.is_full() || session.elapsed_s >= self.timing.max_session_s;
        if stalled {
            return self.abort(net, provider, TerminalReason::ConsumerCancelled);
        }
        if let Phase::Charging {
            tick_index: next,
            due_us,
            ..
        } = &mut self.phase
        {
            *next = tick_index + 1;
            *due_us = to_micros(monitor.scheduled_s(tick_index + 1));
        }
        Ok(())
    }

    fn abort<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        provider: Endpoint,
        reason: TerminalReason,
    ) -> Result<(), ScenarioError> {
        let session = self.session.take().expect("active session");
        let msg = ProtocolMessage::Abort {
            session_id: session.session_id.clone(),
            reason,
        };
        self.session = Some(session.transition(&msg)?);
        let _ = net.send(&self.endpoint, &provider, &msg);
        self.finish(provider.device_id, reason);
        Ok(())
    }

    fn finish(&mut self, provider_id: String, reason: TerminalReason) {
        let session_id = self
            .session
            .as_ref()
            .map(|s| s.session_id.clone())
            .unwrap_or_default();
        self.phase = Phase::Done(ConsumerOutcome::Ended {
            session_id,
            provider_id,
            reason,
        });
    }
}

pub struct ProviderAgent {
    endpoint: Endpoint,
    device: DeviceSpec,
    bench: PowerBench,
    timing: AgentTiming,
    book: SessionBook,
    records: BTreeMap<String, Vec<MonitorRecord>>,
    /// Deadline per open (accepted or charging) session.
    deadlines: BTreeMap<String, u64>,
}

impl ProviderAgent {
    pub fn new(
        endpoint: Endpoint,
        device: DeviceSpec,
        bench: PowerBench,
        timing: AgentTiming,
    ) -> Self {
        Self {
            endpoint,
            device,
            bench,
            timing,
            book: SessionBook::new(),
            records: BTreeMap::new(),
            deadlines: BTreeMap::new(),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn device_id(&self) -> &str {
        &self.device.device_id
    }

    pub fn book(&self) -> &SessionBook {
        &self.book
    }

    pub fn records(&self, session_id: &str) -> &[MonitorRecord] {
        self.records.get(session_id).map_or(&[], Vec::as_slice)
    }

    /// True when no session is accepted or charging.
    pub fn is_idle(&self) -> bool {
        self.deadlines.is_empty()
    }

    pub fn next_wake_us(&self) -> Option<u64> {
        self.deadlines.values().min().copied()
    }

    /// Joins the area and advertises availability.
    pub fn start<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        net.register(&self.endpoint)?;
        self.advertise(net)
    }

    fn advertise<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        let advert = ProviderAdvert {
            provider_id: self.device.device_id.clone(),
            position: self.device.position,
            battery_level_pct: self.level_pct(),
            technology: self.bench.technology().technology,
            available: self.is_idle(),
        };
        net.advertise(&self.endpoint, advert)?;
        Ok(())
    }

    fn level_pct(&self) -> f64 {
        self.bench
            .battery(&self.device.device_id)
            .expect("provider on the bench")
            .level_pct()
    }

    fn accept_deadline_us(&self, now_s: f64) -> u64 {
        to_micros(now_s + 3.0 * self.timing.response_timeout_s)
    }

    fn silence_deadline_us(&self, now_s: f64) -> u64 {
        to_micros(now_s + 5.0 * self.timing.interval_s + self.timing.response_timeout_s)
    }

    pub fn poll<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        while let Some(env) = net.recv(&self.endpoint)? {
            self.handle(net, &env.msg)?;
        }
        self.on_time(net)
    }

    pub fn handle<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        msg: &ProtocolMessage,
    ) -> Result<(), ScenarioError> {
        let now_s = net.now_s();
        match msg {
            ProtocolMessage::Request { request, .. } => {
                let session = SessionState::new(request.clone(), &self.device.device_id);
                if self.book.get(&session.session_id).is_some() {
                    return Ok(());
                }
                let session = session.transition(msg)?;
                let accept = self.is_idle()
                    && accepts_request(self.level_pct(), self.device.accept_threshold_pct);
                let reply = if accept {
                    ProtocolMessage::Accept {
                        request_id: request.request_id.clone(),
                    }
                } else {
                    ProtocolMessage::Reject {
                        request_id: request.request_id.clone(),
                    }
                };
                let session_id = session.session_id.clone();
                self.book.insert(session.transition(&reply)?)?;
                if accept {
                    self.deadlines
                        .insert(session_id, self.accept_deadline_us(now_s));
                    self.advertise(net)?;
                }
                self.reply(net, &request.consumer_id, &reply);
            }
            ProtocolMessage::StartTransfer { session_id, .. } => {
                if self.book.apply(session_id, msg).is_ok() {
                    self.records.insert(session_id.clone(), Vec::new());
                    self.deadlines
                        .insert(session_id.clone(), self.silence_deadline_us(now_s));
                }
            }
            ProtocolMessage::MonitorSync {
                session_id,
                tick_index,
                wall_time_s,
            } => self.on_sync(net, session_id, *tick_index, *wall_time_s)?,
            ProtocolMessage::Complete { session_id, .. }
            | ProtocolMessage::Abort { session_id, .. } => {
                if self.book.apply(session_id, msg).is_ok() {
                    self.close(net, session_id)?;
                }
            }
            ProtocolMessage::Accept { .. } | ProtocolMessage::Reject { .. } => {}
        }
        Ok(())
    }

    fn on_sync<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        session_id: &str,
        tick_index: u64,
        wall_time_s: f64,
    ) -> Result<(), ScenarioError> {
        let Some(session) = self.book.get(session_id) else {
            return Ok(());
        };
        let status = session.status;
        let expected = self.records.get(session_id).map_or(0, |r| r.len() as u64);
        let snapshot = self.bench.snapshot(session_id, tick_index);
        match (status, snapshot) {
            (SessionStatus::Charging, Some(snap)) if tick_index == expected => {
                let sync = ProtocolMessage::MonitorSync {
                    session_id: session_id.to_string(),
                    tick_index,
                    wall_time_s,
                };
                self.book.apply(session_id, &sync)?;
                let record = MonitorRecord::capture(
                    session_id,
                    tick_index,
                    wall_time_s,
                    &self.device.device_id,
                    Role::Provider,
                    &snap.battery,
                    snap.cumulative_out_mah,
                );
                self.records
                    .entry(session_id.to_string())
                    .or_default()
                    .push(record);
                self.deadlines.insert(
                    session_id.to_string(),
                    self.silence_deadline_us(net.now_s()),
                );
                Ok(())
            }
            // a missed tick or a missed start cannot be recovered
            (SessionStatus::Charging | SessionStatus::Accepted, _) => {
                let consumer_id = session.request.consumer_id.clone();
                let abort = ProtocolMessage::Abort {
                    session_id: session_id.to_string(),
                    reason: TerminalReason::TransportLost,
                };
                self.book.apply(session_id, &abort)?;
                self.reply(net, &consumer_id, &abort);
                self.close(net, session_id)
            }
            _ => Ok(()),
        }
    }

    fn on_time<T: Transport + ?Sized>(&mut self, net: &mut T) -> Result<(), ScenarioError> {
        let now_us = to_micros(net.now_s());
        let expired: Vec<String> = self
            .deadlines
            .iter()
            .filter(|(_, d)| now_us >= **d)
            .map(|(id, _)| id.clone())
            .collect();
        for session_id in expired {
            let abort = ProtocolMessage::Abort {
                session_id: session_id.clone(),
                reason: TerminalReason::TransportLost,
            };
            self.book.apply(&session_id, &abort)?;
            self.close(net, &session_id)?;
        }
        Ok(())
    }

    fn close<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        session_id: &str,
    ) -> Result<(), ScenarioError> {
        self.deadlines.remove(session_id);
        self.advertise(net)
    }

    fn reply<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        consumer_id: &str,
        msg: &ProtocolMessage,
    ) {
        // an unreachable consumer surfaces through the session timeouts
        if let Ok(to) = net.lookup(consumer_id) {
            let _ = net.send(&self.endpoint, &to, msg);
        }
    }
}
