//! Emulated hardware shared by the scripted agents: device batteries, the
//! charging link and a per-session ledger of every transfer tick.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::battery::{
    transfer_tick, BatteryError, BatteryState, DrainParams, TechnologyParams, TransferTick,
};

/// Running totals over a session's transfer ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ledger {
    pub ticks: u64,
    pub mah_out: f64,
    pub mah_in: f64,
    pub mah_lost: f64,
    pub provider_baseline_mah: f64,
    pub consumer_baseline_mah: f64,
}

impl Ledger {
    fn add(&mut self, t: &TransferTick) {
        self.ticks += 1;
        self.mah_out += t.mah_out;
        self.mah_in += t.mah_in;
        self.mah_lost += t.mah_lost;
        self.provider_baseline_mah += t.provider_baseline_mah;
        self.consumer_baseline_mah += t.consumer_baseline_mah;
    }

    pub fn provider_loss_mah(&self) -> f64 {
        self.mah_out + self.provider_baseline_mah
    }

    pub fn consumer_gain_mah(&self) -> f64 {
        self.mah_in - self.consumer_baseline_mah
    }
}

/// Provider-side reading at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProviderSnapshot {
    pub battery: BatteryState,
    pub cumulative_out_mah: f64,
}

#[derive(Debug, Clone)]
struct Link {
    provider_id: String,
    consumer_id: String,
    ledger: Ledger,
    snapshots: Vec<ProviderSnapshot>,
}

#[derive(Debug, Default)]
struct Inner {
    batteries: BTreeMap<String, (BatteryState, DrainParams)>,
    links: BTreeMap<String, Link>,
}

#[derive(Debug, Clone)]
pub struct PowerBench {
    technology: TechnologyParams,
    inner: Arc<Mutex<Inner>>,
}

impl PowerBench {
    pub fn new(technology: TechnologyParams) -> Self {
        Self {
            technology,
            inner: Arc::default(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("power bench lock")
    }

    pub fn technology(&self) -> TechnologyParams {
        self.technology
    }

    pub fn add_device(&self, device_id: &str, battery: BatteryState, drain: DrainParams) {
        self.lock()
            .batteries
            .insert(device_id.to_string(), (battery, drain));
    }

    pub fn battery(&self, device_id: &str) -> Option<BatteryState> {
        self.lock().batteries.get(device_id).map(|(b, _)| *b)
    }

    pub fn drain(&self, device_id: &str) -> Option<DrainParams> {
        self.lock().batteries.get(device_id).map(|(_, d)| *d)
    }

    /// Connects the link and takes the tick-0 provider snapshot.
    pub fn connect(&self, session_id: &str, provider_id: &str, consumer_id: &str) {
        let mut inner = self.lock();
        let battery = inner.batteries[provider_id].0;
        inner.links.insert(
            session_id.to_string(),
            Link {
                provider_id: provider_id.to_string(),
                consumer_id: consumer_id.to_string(),
                ledger: Ledger::default(),
                snapshots: vec![ProviderSnapshot {
                    battery,
                    cumulative_out_mah: 0.0,
                }],
            },
        );
    }

    /// Runs one transfer tick on a connected link.
    pub fn step(&self, session_id: &str, dt_s: f64) -> Result<TransferTick, BatteryError> {
        let mut guard = self.lock();
        let inner = &mut *guard;
        let link = inner
            .links
            .get_mut(session_id)
            .expect("step on a connected session");
        let (provider, p_drain) = inner.batteries[&link.provider_id];
        let (consumer, c_drain) = inner.batteries[&link.consumer_id];
        let (provider, consumer, tick) =
            transfer_tick(provider, consumer, &self.technology, p_drain, c_drain, dt_s)?;
        inner.batteries.get_mut(&link.provider_id).unwrap().0 = provider;
        inner.batteries.get_mut(&link.consumer_id).unwrap().0 = consumer;
        link.ledger.add(&tick);
        link.snapshots.push(ProviderSnapshot {
            battery: provider,
            cumulative_out_mah: link.ledger.mah_out,
        });
        Ok(tick)
    }

    pub fn snapshot(&self, session_id: &str, tick_index: u64) -> Option<ProviderSnapshot> {
        self.lock()
            .links
            .get(session_id)
            .and_then(|l| l.snapshots.get(tick_index as usize).copied())
    }

    pub fn ledger(&self, session_id: &str) -> Option<Ledger> {
        self.lock().links.get(session_id).map(|l| l.ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Technology;

    #[test]
    fn step_updates_batteries_and_ledger() {
        let bench = PowerBench::new(TechnologyParams::defaults(Technology::Cable));
        bench.add_device(
            "p",
            BatteryState::full(4080.0).unwrap(),
            DrainParams::none(),
        );
        bench.add_device(
            "c",
            BatteryState::at_level(2915.0, 40.0).unwrap(),
            DrainParams::none(),
        );
        bench.connect("s", "p", "c");
        let tick = bench.step("s", 3600.0).unwrap();
        assert_eq!(tick.mah_out, 1200.0);
        assert_eq!(bench.battery("p").unwrap().charge_mah(), 2880.0);
        assert_eq!(bench.battery("c").unwrap().charge_mah(), 1166.0 + 1080.0);
        let ledger = bench.ledger("s").unwrap();
        assert_eq!((ledger.ticks, ledger.mah_in), (1, 1080.0));
        assert_eq!(bench.snapshot("s", 1).unwrap().cumulative_out_mah, 1200.0);
        assert_eq!(bench.snapshot("s", 0).unwrap().battery.charge_mah(), 4080.0);
        assert!(bench.snapshot("s", 2).is_none());
    }
}
