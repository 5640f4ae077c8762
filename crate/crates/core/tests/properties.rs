use num_rational::Ratio;
use proptest::prelude::*;

use energy_share::battery::{
    predict_outcome, ticks_to_reach, transfer_tick, BatteryState, DrainParams, Technology,
    TechnologyParams,
};
use energy_share::matching::{
    next_after_reject, rank_providers, select_provider, Position, ProviderAdvert,
};
use energy_share::monitor::{
    pair_records, parse_trace_csv, trace_csv, MonitorRecord, Role, TracePair,
};
use energy_share::protocol::{
    Demand, EnergyRequest, ProtocolMessage, RequestKind, SessionBook, SessionState, SessionStatus,
    TerminalReason,
};
use energy_share::scalar::close;
use energy_share::transport::{Endpoint, SimConfig, SimTransport, Transport};

fn technology() -> impl Strategy<Value = TechnologyParams> {
    (
        prop::sample::select(Technology::ALL.to_vec()),
        100.0..3000.0f64,
        0.05..1.0f64,
        50.0..99.0f64,
    )
        .prop_map(|(t, rate, eff, taper)| TechnologyParams {
            transfer_rate_ma: rate,
            efficiency: eff,
            taper_start_pct: taper,
            ..TechnologyParams::defaults(t)
        })
}

fn battery() -> impl Strategy<Value = BatteryState> {
    (100.0..6000.0f64, 0.0..=100.0f64)
        .prop_map(|(cap, pct)| BatteryState::at_level(cap, pct).unwrap())
}

fn drain() -> impl Strategy<Value = DrainParams> {
    (0.0..200.0f64).prop_map(|ma| DrainParams::new(ma).unwrap())
}

proptest! {
    #[test]
    fn tick_conserves_charge(
        p in battery(), c in battery(), params in technology(),
        pd in drain(), cd in drain(), dt in 0.01..120.0f64,
    ) {
        prop_assume!(!p.is_empty());
        let (p2, c2, t) = transfer_tick(p, c, &params, pd, cd, dt).unwrap();
        prop_assert!(close(p.charge_mah(), p2.charge_mah() + t.mah_out + t.provider_baseline_mah, 1e-9));
        prop_assert!(close(c2.charge_mah() + t.consumer_baseline_mah, c.charge_mah() + t.mah_in, 1e-9));
        prop_assert!(close(t.mah_out, t.mah_in + t.mah_lost, 1e-9));
        prop_assert!(t.mah_in <= params.efficiency * t.mah_out * (1.0 + 1e-12));
        prop_assert!(t.mah_out >= 0.0 && t.mah_in >= 0.0 && t.mah_lost >= 0.0);
        prop_assert!(p2.charge_mah() >= 0.0 && c2.charge_mah() <= c2.capacity_mah());
    }

    #[test]
    fn iteration_matches_closed_form(
        rate in 100.0..2000.0f64, eff in 0.1..1.0f64, cap in 2000.0..5000.0f64,
        start in 0.0..30.0f64, pdrain in 0.0..80.0f64, cdrain in 0.0..80.0f64,
        dt in prop::sample::select(vec![0.5, 1.0, 2.0, 5.0]),
        duration in prop::bool::ANY, value in 1.0..600.0f64,
    ) {
        let params = TechnologyParams {
            transfer_rate_ma: rate,
            efficiency: eff,
            ..TechnologyParams::defaults(Technology::Cable)
        };
        let provider = BatteryState::full(cap).unwrap();
        let consumer = BatteryState::at_level(2915.0, start).unwrap();
        let (pd, cd) = (DrainParams::new(pdrain).unwrap(), DrainParams::new(cdrain).unwrap());
        let kind = if duration { RequestKind::Duration } else { RequestKind::Amount };
        let Ok(pred) = predict_outcome(provider, consumer, &params, pd, cd, kind, value, dt) else {
            return Ok(());
        };
        let (mut p, mut c, mut ticks, mut delivered, mut elapsed) = (provider, consumer, 0u64, 0.0, 0.0);
        let reached = |have: f64| have >= value * (1.0 - 1e-12);
        while !reached(if duration { elapsed } else { delivered }) {
            let (p2, c2, t) = transfer_tick(p, c, &params, pd, cd, dt).unwrap();
            p = p2;
            c = c2;
            ticks += 1;
            delivered += t.mah_in;
            elapsed += dt;
        }
        prop_assert_eq!(ticks, pred.ticks);
        prop_assert!(close(p.charge_mah(), pred.provider_charge_mah, 1e-9));
        prop_assert!(close(c.charge_mah(), pred.consumer_charge_mah, 1e-9));
    }

    #[test]
    fn ceil_closed_form_is_exact(
        value in 1i64..100_000, rate in 1i64..3000, eff_pct in 1i64..=100, dt in 1i64..60,
    ) {
        // per-tick intake in mAh = eff_pct/100 * rate * dt / 3600
        let per_tick = Ratio::new(eff_pct * rate * dt, 100 * 3600);
        let exact = (Ratio::from_integer(value) / per_tick).ceil().to_integer() as u64;
        let f = eff_pct as f64 / 100.0 * rate as f64 * dt as f64 / 3600.0;
        prop_assert_eq!(ticks_to_reach(value as f64, f), Some(exact));
    }

    #[test]
    fn ranking_matches_brute_force(
        points in prop::collection::vec((0i32..20, 0i32..20, prop::bool::weighted(0.8)), 0..100),
        cx in 0i32..20, cy in 0i32..20,
    ) {
        let adverts: Vec<ProviderAdvert> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y, available))| ProviderAdvert {
                provider_id: format!("P{:03}", (i * 37) % 101),
                position: Position::new(x as f64, y as f64),
                battery_level_pct: 80.0,
                technology: Technology::Cable,
                available,
            })
            .collect();
        let consumer = Position::new(cx as f64, cy as f64);
        let brute = adverts
            .iter()
            .filter(|a| a.available)
            .map(|a| {
                let (dx, dy) = (a.position.x as i64 - cx as i64, a.position.y as i64 - cy as i64);
                (dx * dx + dy * dy, a.provider_id.clone())
            })
            .min();
        prop_assert_eq!(select_provider(consumer, &adverts).ok(), brute.map(|(_, id)| id));

        let ranking = rank_providers(consumer, &adverts);
        let mut rejected: Vec<String> = Vec::new();
        while let Ok(next) = next_after_reject(&ranking, &rejected) {
            prop_assert!(!rejected.contains(&next));
            rejected.push(next);
        }
        prop_assert_eq!(rejected, ranking);
    }

    #[test]
    fn trace_csv_round_trips(
        readings in prop::collection::vec((0.0..4080.0f64, 0.0..2915.0f64, 0.0..1e4f64), 1..50),
        start in 0.0..1e6f64,
    ) {
        let pairs: Vec<TracePair> = readings
            .iter()
            .enumerate()
            .map(|(i, &(p, c, cum))| {
                let rec = |role, dev: &str, charge: f64, cap: f64| MonitorRecord {
                    session_id: "C-r1~P".into(),
                    tick_index: i as u64,
                    wall_time_s: start + i as f64,
                    device_id: dev.into(),
                    role,
                    battery_level_pct: 100.0 * charge / cap,
                    battery_charge_mah: charge,
                    cumulative_transferred_mah: cum,
                };
                TracePair {
                    provider: rec(Role::Provider, "P", p, 4080.0),
                    consumer: rec(Role::Consumer, "C", c, 2915.0),
                }
            })
            .collect();
        let text = trace_csv(&pairs);
        let back = pair_records(&parse_trace_csv(&text).unwrap()).unwrap();
        prop_assert_eq!(&back, &pairs);
        prop_assert_eq!(trace_csv(&back), text);
    }

    #[test]
    fn sim_transport_preserves_per_pair_order(
        sends in prop::collection::vec((0usize..3, 0usize..3, 0u64..2_000_000), 1..60),
        latency in 0.0..0.5f64,
    ) {
        let mut net = SimTransport::new(SimConfig { latency_s: latency, drop_probability: 0.0, seed: 1 });
        let eps: Vec<Endpoint> = (0..3).map(|i| Endpoint::simulated(&format!("d{i}"))).collect();
        for e in &eps {
            net.register(e).unwrap();
        }
        let mut expected = vec![vec![Vec::new(); 3]; 3];
        let mut steps: Vec<_> = sends.clone();
        steps.sort_by_key(|s| s.2);
        for (n, &(from, to, at_us)) in steps.iter().enumerate() {
            if at_us > net.clock().now_us() {
                net.advance_to_us(at_us);
            }
            let msg = ProtocolMessage::Accept { request_id: format!("r{n}") };
            net.send(&eps[from], &eps[to], &msg).unwrap();
            expected[from][to].push(format!("r{n}"));
        }
        net.advance(latency + 1.0).unwrap();
        let mut got: Vec<Vec<String>> = vec![Vec::new(); 3];
        for (i, e) in eps.iter().enumerate() {
            while let Some(env) = net.recv(e).unwrap() {
                got[i].push(env.msg.request_id().unwrap().to_string());
            }
        }
        for to in 0..3 {
            // per-sender subsequence of what `to` received is in send order
            for from in 0..3 {
                let sub: Vec<&String> = got[to].iter().filter(|id| expected[from][to].contains(id)).collect();
                let want: Vec<&String> = expected[from][to].iter().collect();
                prop_assert_eq!(sub, want);
            }
        }
    }
}

/// Independent transition table for one session.
fn oracle(status: SessionStatus, msg: &ProtocolMessage) -> Option<SessionStatus> {
    use ProtocolMessage as M;
    use SessionStatus as S;
    match (status, msg) {
        (S::Idle, M::Request { .. }) => Some(S::Requested),
        (S::Requested, M::Accept { .. }) => Some(S::Accepted),
        (S::Requested, M::Reject { .. }) => Some(S::Rejected),
        (S::Accepted, M::StartTransfer { .. }) => Some(S::Charging),
        (S::Charging, M::MonitorSync { .. }) => Some(S::Charging),
        (S::Charging, M::Complete { reason, .. })
            if matches!(
                reason,
                TerminalReason::AmountDelivered | TerminalReason::DurationElapsed
            ) =>
        {
            Some(S::Completed)
        }
        (S::Accepted | S::Charging, M::Abort { reason, .. })
            if !matches!(
                reason,
                TerminalReason::AmountDelivered | TerminalReason::DurationElapsed
            ) =>
        {
            Some(S::Aborted)
        }
        _ => None,
    }
}

const REASONS: [TerminalReason; 5] = [
    TerminalReason::AmountDelivered,
    TerminalReason::DurationElapsed,
    TerminalReason::ProviderDepleted,
    TerminalReason::ConsumerCancelled,
    TerminalReason::TransportLost,
];

fn event(kind: u8, reason: usize, request: &EnergyRequest, session_id: &str) -> ProtocolMessage {
    let sid = session_id.to_string();
    let rid = request.request_id.clone();
    match kind % 7 {
        0 => ProtocolMessage::Request {
            request: request.clone(),
            position: (0.0, 0.0),
        },
        1 => ProtocolMessage::Accept { request_id: rid },
        2 => ProtocolMessage::Reject { request_id: rid },
        3 => ProtocolMessage::StartTransfer {
            session_id: sid,
            interval_s: 1.0,
        },
        4 => ProtocolMessage::MonitorSync {
            session_id: sid,
            tick_index: 0,
            wall_time_s: 0.0,
        },
        5 => ProtocolMessage::Complete {
            session_id: sid,
            reason: REASONS[reason % 5],
        },
        _ => ProtocolMessage::Abort {
            session_id: sid,
            reason: REASONS[reason % 5],
        },
    }
}

proptest! {
    #[test]
    fn session_follows_transition_table(events in prop::collection::vec((0u8..7, 0usize..5, prop::bool::weighted(0.1)), 0..20)) {
        let request = EnergyRequest {
            request_id: "C-r1".into(),
            consumer_id: "C".into(),
            demand: Demand::Duration { seconds: 10.0 },
        };
        let mut s = SessionState::new(request.clone(), "P");
        let mut terminals = 0;
        for (kind, reason, foreign) in events {
            let sid = if foreign { "other~P".to_string() } else { s.session_id.clone() };
            let req = if foreign {
                EnergyRequest { request_id: "C-r9".into(), ..request.clone() }
            } else {
                request.clone()
            };
            let msg = event(kind, reason, &req, &sid);
            let expected = if foreign { None } else { oracle(s.status, &msg) };
            match (s.transition(&msg), expected) {
                (Ok(next), Some(status)) => {
                    prop_assert_eq!(next.status, status);
                    if status.is_terminal() && !s.status.is_terminal() {
                        terminals += 1;
                    }
                    s = next;
                }
                (Err(_), None) => {}
                (got, want) => prop_assert!(false, "{:?} on {:?}: got {:?}, want {:?}", msg, s.status, got, want),
            }
        }
        prop_assert!(terminals <= 1);
    }

    #[test]
    fn provider_never_charges_twice(ops in prop::collection::vec((0usize..4, 0u8..7, 0usize..5), 0..60)) {
        let mut book = SessionBook::new();
        let requests: Vec<EnergyRequest> = (0..4)
            .map(|i| EnergyRequest {
                request_id: format!("C{i}-r1"),
                consumer_id: format!("C{i}"),
                demand: Demand::Amount { mah: 5.0 },
            })
            .collect();
        for r in &requests {
            book.insert(SessionState::new(r.clone(), "P")).unwrap();
        }
        for (i, kind, reason) in ops {
            let sid = SessionState::id_for(&requests[i].request_id, "P");
            let msg = event(kind, reason, &requests[i], &sid);
            let before = book.get(&sid).unwrap().status;
            let busy = book.charging_session_of("P").filter(|s| *s != sid).is_some();
            let result = book.apply(&sid, &msg).map(|s| s.status);
            match oracle(before, &msg) {
                Some(SessionStatus::Charging) if busy => prop_assert!(result.is_err()),
                Some(status) => prop_assert_eq!(result.unwrap(), status),
                None => prop_assert!(result.is_err()),
            }
            let charging = book.iter().filter(|s| s.status == SessionStatus::Charging).count();
            prop_assert!(charging <= 1);
        }
    }
}
