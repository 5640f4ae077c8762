use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::agent::{AgentTiming, ConsumerAgent, ConsumerOutcome, ProviderAgent};
use super::bench::{Ledger, PowerBench};
use super::config::{DeviceSpec, Scenario};
use super::ScenarioError;
use crate::battery::BatteryState;
use crate::edge::{EdgeClient, Receipt, SessionDataset};
use crate::monitor::{align_traces, aligned_prefix, compute_metrics, Capacities, MonitorRecord};
use crate::protocol::TerminalReason;
use crate::transport::{
    ClockMode, Endpoint, RegistryServer, SimConfig, SimTransport, TcpTransport, Transport,
    WallClock,
};

/// How long providers keep serving after the consumer is done, in real time.
const WALL_GRACE: Duration = Duration::from_secs(2);
/// Longest real-time wait between agent polls in wall mode.
const WALL_SLICE: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    NoProviderAvailable,
    Session {
        session_id: String,
        provider_id: String,
        terminal_reason: TerminalReason,
    },
}

impl RunOutcome {
    pub fn terminal_reason(&self) -> Option<TerminalReason> {
        match self {
            RunOutcome::NoProviderAvailable => None,
            RunOutcome::Session {
                terminal_reason, ..
            } => Some(*terminal_reason),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_id: String,
    pub outcome: RunOutcome,
    /// Aligned session data; absent when no session started or no tick was
    /// recorded on both sides.
    pub dataset: Option<SessionDataset>,
    /// Transfer-tick totals as booked by the emulated hardware.
    pub ledger: Option<Ledger>,
}

fn timing(s: &Scenario) -> AgentTiming {
    AgentTiming {
        interval_s: s.interval_s,
        response_timeout_s: s.transport.response_timeout_s,
        max_session_s: s.max_session_s,
    }
}

fn bench_for(s: &Scenario) -> Result<PowerBench, ScenarioError> {
    let bench = PowerBench::new(s.technology);
    for d in &s.devices {
        bench.add_device(
            &d.device_id,
            BatteryState::at_level(d.capacity_mah, d.start_level_pct)?,
            d.drain,
        );
    }
    Ok(bench)
}

fn providers(s: &Scenario) -> Vec<&DeviceSpec> {
    s.providers().collect()
}

pub fn run_scenario(s: &Scenario) -> Result<RunReport, ScenarioError> {
    match s.clock {
        ClockMode::Virtual => run_virtual(s),
        ClockMode::Wall => run_wall(s),
    }
}

fn run_virtual(s: &Scenario) -> Result<RunReport, ScenarioError> {
    let bench = bench_for(s)?;
    let mut net = SimTransport::new(SimConfig {
        latency_s: s.transport.latency_s,
        drop_probability: s.transport.drop_probability,
        seed: s.seed,
    });
    let mut agents: Vec<ProviderAgent> = providers(s)
        .into_iter()
        .map(|d| {
            ProviderAgent::new(
                Endpoint::simulated(&d.device_id),
                d.clone(),
                bench.clone(),
                timing(s),
            )
        })
        .collect();
    for a in &mut agents {
        a.start(&mut net)?;
    }
    let c = s.consumer();
    let endpoint = Endpoint::simulated(&c.device_id);
    net.register(&endpoint)?;
    let mut consumer = ConsumerAgent::new(
        endpoint,
        c.clone(),
        s.request.demand,
        bench.clone(),
        timing(s),
    );

    loop {
        for a in &mut agents {
            a.poll(&mut net)?;
        }
        consumer.poll(&mut net)?;
        if consumer.is_done() && net.in_flight() == 0 && agents.iter().all(ProviderAgent::is_idle) {
            break;
        }
        let next = agents
            .iter()
            .filter_map(ProviderAgent::next_wake_us)
            .chain(consumer.next_wake_us())
            .chain(net.next_delivery_us())
            .min();
        let Some(next) = next else { break };
        let now = net.clock().now_us();
        if next > now {
            if let Some(pace) = s.pace {
                thread::sleep(Duration::from_secs_f64((next - now) as f64 / 1e6 / pace));
            }
            net.advance_to_us(next);
        }
    }
    assemble(s, &bench, &consumer, &agents, ClockMode::Virtual)
}

fn run_wall(s: &Scenario) -> Result<RunReport, ScenarioError> {
    let bench = bench_for(s)?;
    let registry = RegistryServer::bind("127.0.0.1:0")?;
    let clock = WallClock::new(s.pace.unwrap_or(1.0));
    let bind = |id: &str, salt: u64| {
        TcpTransport::bind(
            id,
            registry.addr(),
            clock,
            s.transport.drop_probability,
            s.seed.wrapping_add(salt),
        )
    };

    let mut provider_nets = Vec::new();
    for (i, d) in providers(s).into_iter().enumerate() {
        let mut net = bind(&d.device_id, i as u64 + 1)?;
        let mut agent =
            ProviderAgent::new(net.endpoint().clone(), d.clone(), bench.clone(), timing(s));
        agent.start(&mut net)?;
        provider_nets.push((agent, net));
    }
    let c = s.consumer();
    let mut consumer_net = bind(&c.device_id, 0)?;
    let endpoint = consumer_net.endpoint().clone();
    consumer_net.register(&endpoint)?;
    let consumer = ConsumerAgent::new(
        endpoint,
        c.clone(),
        s.request.demand,
        bench.clone(),
        timing(s),
    );

    let stop = Arc::new(AtomicBool::new(false));
    let slice_s = WALL_SLICE.as_secs_f64() * clock.pace();
    let handles: Vec<_> = provider_nets
        .into_iter()
        .map(|(mut agent, mut net)| {
            let stop = stop.clone();
            thread::spawn(move || -> Result<ProviderAgent, ScenarioError> {
                let mut stopped_at: Option<Instant> = None;
                loop {
                    if stop.load(Ordering::SeqCst) {
                        let since = *stopped_at.get_or_insert_with(Instant::now);
                        if agent.is_idle() || since.elapsed() > WALL_GRACE {
                            break;
                        }
                    }
                    let deadline = wake_deadline(agent.next_wake_us(), net.now_s() + slice_s);
                    if let Some(env) = net.recv_until(deadline)? {
                        agent.handle(&mut net, &env.msg)?;
                    }
                    agent.poll(&mut net)?;
                }
                let id = agent.device_id().to_string();
                let _ = net.deregister(&id);
                Ok(agent)
            })
        })
        .collect();

    let consumer_result = thread::spawn(move || -> Result<ConsumerAgent, ScenarioError> {
        let mut consumer = consumer;
        let mut net = consumer_net;
        while !consumer.is_done() {
            let deadline = wake_deadline(consumer.next_wake_us(), net.now_s() + slice_s);
            if let Some(env) = net.recv_until(deadline)? {
                consumer.handle(&mut net, &env.msg)?;
            }
            consumer.poll(&mut net)?;
        }
        let id = consumer.endpoint().device_id.clone();
        let _ = net.deregister(&id);
        Ok(consumer)
    })
    .join();
    stop.store(true, Ordering::SeqCst);
    let mut agents = Vec::new();
    for h in handles {
        agents.push(
            h.join()
                .map_err(|_| ScenarioError::Run("provider thread panicked".into()))??,
        );
    }
    registry.shutdown();
    let consumer =
        consumer_result.map_err(|_| ScenarioError::Run("consumer thread panicked".into()))??;
    assemble(s, &bench, &consumer, &agents, ClockMode::Wall)
}

fn wake_deadline(wake_us: Option<u64>, cap_s: f64) -> f64 {
    wake_us.map_or(cap_s, |us| (us as f64 / 1e6).min(cap_s))
}

fn assemble(
    s: &Scenario,
    bench: &PowerBench,
    consumer: &ConsumerAgent,
    providers: &[ProviderAgent],
    clock_mode: ClockMode,
) -> Result<RunReport, ScenarioError> {
    let outcome = consumer
        .outcome()
        .cloned()
        .ok_or_else(|| ScenarioError::Run("consumer stopped before finishing".into()))?;
    let ConsumerOutcome::Ended {
        session_id,
        provider_id,
        reason,
    } = outcome
    else {
        return Ok(RunReport {
            run_id: s.name.clone(),
            outcome: RunOutcome::NoProviderAvailable,
            dataset: None,
            ledger: None,
        });
    };
    let provider_records: &[MonitorRecord] = providers
        .iter()
        .find(|p| p.device_id() == provider_id)
        .map_or(&[], |p| p.records(&session_id));
    let (records, reason) = match align_traces(provider_records, consumer.records()) {
        Ok(pairs) => (pairs, reason),
        Err(_) => (
            aligned_prefix(provider_records, consumer.records()),
            TerminalReason::TransportLost,
        ),
    };
    let provider = s.device(&provider_id).expect("provider from the scenario");
    let consumer_spec = s.consumer();
    let capacities = Capacities {
        provider_mah: provider.capacity_mah,
        consumer_mah: consumer_spec.capacity_mah,
    };
    let request = consumer.session().expect("ended session").request.clone();
    let dataset = if records.is_empty() {
        None
    } else {
        let metrics = compute_metrics(&records, &capacities)?.with_reason(reason);
        Some(SessionDataset {
            session_id: session_id.clone(),
            request,
            provider_id: provider_id.clone(),
            consumer_id: consumer_spec.device_id.clone(),
            technology: bench.technology(),
            provider_drain: provider.drain,
            consumer_drain: consumer_spec.drain,
            capacities,
            interval_s: s.interval_s,
            clock_mode,
            records,
            metrics,
            terminal_reason: reason,
        })
    };
    Ok(RunReport {
        run_id: s.name.clone(),
        outcome: RunOutcome::Session {
            session_id: session_id.clone(),
            provider_id,
            terminal_reason: reason,
        },
        dataset,
        ledger: bench.ledger(&session_id),
    })
}

const OUTCOME_FILE: &str = "outcome.txt";

/// Writes `<out_dir>/<run_id>/{outcome.txt, meta.txt, trace.csv}` and returns
/// the run directory.
pub fn write_run(report: &RunReport, out_dir: &Path) -> Result<PathBuf, ScenarioError> {
    let dir = out_dir.join(&report.run_id);
    fs::create_dir_all(&dir)?;
    let outcome = match &report.outcome {
        RunOutcome::NoProviderAvailable => "outcome=NoProviderAvailable\n".to_string(),
        RunOutcome::Session {
            session_id,
            provider_id,
            terminal_reason,
        } => format!(
            "outcome=Session\nsession_id={session_id}\nprovider_id={provider_id}\nterminal_reason={terminal_reason}\n"
        ),
    };
    fs::write(dir.join(OUTCOME_FILE), outcome)?;
    for stale in [super::META_FILE, super::TRACE_FILE] {
        let _ = fs::remove_file(dir.join(stale));
    }
    if let Some(d) = &report.dataset {
        fs::write(dir.join(super::META_FILE), d.meta_text())?;
        fs::write(dir.join(super::TRACE_FILE), d.trace_text())?;
    }
    Ok(dir)
}

pub fn upload(report: &RunReport, addr: &str) -> Result<Receipt, ScenarioError> {
    let dataset = report
        .dataset
        .as_ref()
        .ok_or_else(|| ScenarioError::Run("no session dataset to upload".into()))?;
    Ok(EdgeClient::connect(addr)?.upload(dataset)?)
}
