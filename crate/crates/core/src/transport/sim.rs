use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clock::{to_micros, ClockMode, VirtualClock};
use super::{Endpoint, Envelope, Registry, Transport, TransportError};
use crate::matching::ProviderAdvert;
use crate::protocol::ProtocolMessage;

pub const DEFAULT_LATENCY_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub latency_s: f64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            latency_s: DEFAULT_LATENCY_S,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

struct InFlight {
    to: String,
    msg: ProtocolMessage,
}

/// Single-threaded transport on a virtual clock. Messages become receivable
/// once the clock reaches their send time plus the configured latency; ties
/// are released in send order.
pub struct SimTransport {
    config: SimConfig,
    clock: VirtualClock,
    registry: Registry,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    in_flight: BTreeMap<u64, InFlight>,
    inboxes: BTreeMap<String, VecDeque<Envelope>>,
    rng: ChaCha8Rng,
    next_seq: u64,
    dropped: u64,
}

impl SimTransport {
    pub fn new(config: SimConfig) -> Self {
        Self {
            config,
            clock: VirtualClock::new(),
            registry: Registry::new(),
            queue: BinaryHeap::new(),
            in_flight: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            next_seq: 0,
            dropped: 0,
        }
    }

    pub fn clock(&self) -> VirtualClock {
        self.clock
    }

    pub fn advance(&mut self, dt_s: f64) -> Result<(), TransportError> {
        self.clock.advance(dt_s)?;
        self.release_due();
        Ok(())
    }

    pub fn advance_to_us(&mut self, target_us: u64) {
        self.clock.advance_to_us(target_us);
        self.release_due();
    }

    /// Delivery time of the earliest message still in flight.
    pub fn next_delivery_us(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse((t, _))| *t)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn release_due(&mut self) {
        let now = self.clock.now_us();
        while let Some(Reverse((t, seq))) = self.queue.peek().copied() {
            if t > now {
                break;
            }
            self.queue.pop();
            let InFlight { to, msg } = self.in_flight.remove(&seq).expect("queued message");
            if let Some(inbox) = self.inboxes.get_mut(&to) {
                inbox.push_back(Envelope {
                    msg,
                    received_at_s: t as f64 / 1e6,
                });
            }
        }
    }
}

impl Transport for SimTransport {
    fn mode(&self) -> ClockMode {
        ClockMode::Virtual
    }

    fn now_s(&self) -> f64 {
        self.clock.now_s()
    }

    fn register(&mut self, endpoint: &Endpoint) -> Result<(), TransportError> {
        self.registry.register(endpoint)?;
        self.inboxes.entry(endpoint.device_id.clone()).or_default();
        Ok(())
    }

    fn deregister(&mut self, device_id: &str) -> Result<(), TransportError> {
        self.registry.deregister(device_id);
        self.inboxes.remove(device_id);
        Ok(())
    }

    fn advertise(
        &mut self,
        endpoint: &Endpoint,
        advert: ProviderAdvert,
    ) -> Result<(), TransportError> {
        self.registry.advertise(endpoint, advert)
    }

    fn discover(&mut self, endpoint: &Endpoint) -> Result<Vec<ProviderAdvert>, TransportError> {
        if !self.registry.is_registered(&endpoint.device_id) {
            return Err(TransportError::NotRegistered(endpoint.device_id.clone()));
        }
        Ok(self.registry.discover())
    }

    fn lookup(&mut self, device_id: &str) -> Result<Endpoint, TransportError> {
        self.registry.lookup(device_id)
    }

    fn send(
        &mut self,
        from: &Endpoint,
        to: &Endpoint,
        msg: &ProtocolMessage,
    ) -> Result<(), TransportError> {
        if !self.registry.is_registered(&from.device_id) {
            return Err(TransportError::NotRegistered(from.device_id.clone()));
        }
        if !self.registry.is_registered(&to.device_id) {
            return Err(TransportError::PeerUnreachable(to.device_id.clone()));
        }
        if self.config.drop_probability > 0.0
            && self.rng.gen::<f64>() < self.config.drop_probability
        {
            self.dropped += 1;
            return Ok(());
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let due = self.clock.now_us() + to_micros(self.config.latency_s);
        self.queue.push(Reverse((due, seq)));
        self.in_flight.insert(
            seq,
            InFlight {
                to: to.device_id.clone(),
                msg: msg.clone(),
            },
        );
        self.release_due();
        Ok(())
    }

    fn recv(&mut self, at: &Endpoint) -> Result<Option<Envelope>, TransportError> {
        self.release_due();
        let inbox = self
            .inboxes
            .get_mut(&at.device_id)
            .ok_or_else(|| TransportError::NotRegistered(at.device_id.clone()))?;
        Ok(inbox.pop_front())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Technology;
    use crate::matching::Position;

    fn accept(id: &str) -> ProtocolMessage {
        ProtocolMessage::Accept {
            request_id: id.into(),
        }
    }

    fn pair() -> (SimTransport, Endpoint, Endpoint) {
        let mut t = SimTransport::new(SimConfig::default());
        let a = Endpoint::simulated("a");
        let b = Endpoint::simulated("b");
        t.register(&a).unwrap();
        t.register(&b).unwrap();
        (t, a, b)
    }

    fn advert(id: &str, available: bool) -> ProviderAdvert {
        ProviderAdvert {
            provider_id: id.into(),
            position: Position::new(0.0, 0.0),
            battery_level_pct: 80.0,
            technology: Technology::Cable,
            available,
        }
    }

    #[test]
    fn fifo_per_pair() {
        let (mut t, a, b) = pair();
        t.send(&a, &b, &accept("m1")).unwrap();
        t.send(&a, &b, &accept("m2")).unwrap();
        t.advance(1.0).unwrap();
        assert_eq!(t.recv(&b).unwrap().unwrap().msg, accept("m1"));
        assert_eq!(t.recv(&b).unwrap().unwrap().msg, accept("m2"));
        assert!(t.recv(&b).unwrap().is_none());
    }

    #[test]
    fn latency_is_respected() {
        let (mut t, a, b) = pair();
        t.advance(1.0).unwrap();
        t.send(&a, &b, &accept("m")).unwrap();
        t.advance(0.049).unwrap();
        assert!(t.recv(&b).unwrap().is_none());
        t.advance(0.001).unwrap();
        let env = t.recv(&b).unwrap().unwrap();
        assert_eq!(env.received_at_s, 1.05);
        assert_eq!(t.now_s(), 1.05);
    }

    #[test]
    fn release_in_timestamp_order() {
        let (mut t, a, b) = pair();
        t.advance_to_us(200_000);
        t.send(&a, &b, &accept("late")).unwrap(); // due 0.25
        let mut t2 = t;
        // earlier message due at 0.5 vs 0.7 with different send times
        let c = Endpoint::simulated("c");
        t2.register(&c).unwrap();
        t2.advance_to_us(450_000);
        t2.send(&c, &b, &accept("x")).unwrap(); // due 0.5
        t2.advance_to_us(650_000);
        t2.send(&a, &b, &accept("y")).unwrap(); // due 0.7
        t2.advance_to_us(1_000_000);
        let got: Vec<_> = std::iter::from_fn(|| t2.recv(&b).unwrap())
            .map(|e| (e.msg.request_id().unwrap().to_string(), e.received_at_s))
            .collect();
        assert_eq!(
            got,
            vec![("late".into(), 0.25), ("x".into(), 0.5), ("y".into(), 0.7)]
        );
    }

    #[test]
    fn deregistered_peer_unreachable() {
        let (mut t, a, b) = pair();
        t.deregister("b").unwrap();
        assert_eq!(
            t.send(&a, &b, &accept("m")),
            Err(TransportError::PeerUnreachable("b".into()))
        );
    }

    #[test]
    fn advertise_discover() {
        let (mut t, a, b) = pair();
        assert!(t.discover(&a).unwrap().is_empty());
        t.advertise(&b, advert("b", true)).unwrap();
        assert_eq!(t.discover(&a).unwrap(), vec![advert("b", true)]);
        // same id and address is an update
        let mut updated = advert("b", true);
        updated.battery_level_pct = 50.0;
        t.advertise(&b, updated.clone()).unwrap();
        assert_eq!(t.discover(&a).unwrap(), vec![updated]);
        // same id, different address
        let imposter = Endpoint::new("b", "sim:elsewhere");
        assert_eq!(
            t.advertise(&imposter, advert("b", true)),
            Err(TransportError::DuplicateDevice("b".into()))
        );
    }

    #[test]
    fn discover_filters_unavailable() {
        let mut t = SimTransport::new(SimConfig::default());
        let me = Endpoint::simulated("me");
        t.register(&me).unwrap();
        for (id, avail) in [("p1", true), ("p2", false), ("p3", true)] {
            let ep = Endpoint::simulated(id);
            t.register(&ep).unwrap();
            t.advertise(&ep, advert(id, avail)).unwrap();
        }
        let ids: Vec<_> = t
            .discover(&me)
            .unwrap()
            .into_iter()
            .map(|a| a.provider_id)
            .collect();
        assert_eq!(ids, ["p1", "p3"]);
    }

    #[test]
    fn drop_probability_one_loses_everything() {
        let mut t = SimTransport::new(SimConfig {
            drop_probability: 1.0,
            ..SimConfig::default()
        });
        let a = Endpoint::simulated("a");
        let b = Endpoint::simulated("b");
        t.register(&a).unwrap();
        t.register(&b).unwrap();
        t.send(&a, &b, &accept("m")).unwrap();
        t.advance(1.0).unwrap();
        assert!(t.recv(&b).unwrap().is_none());
        assert_eq!(t.dropped(), 1);
    }
}
