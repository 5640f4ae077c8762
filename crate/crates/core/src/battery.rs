//! Battery charge/discharge dynamics and charging-technology models.
//!
//! Charge is accounted in mAh at nominal voltage. A transfer tick applies the
//! baseline self-drain of both peers first and then moves charge from the
//! provider to the consumer through a [`TechnologyParams`] link. Whatever
//! leaves the provider and does not arrive at the consumer is reported as
//! `mah_lost`, so that over a session
//!
//! ```text
//! provider_loss - consumer_gain = Σ mah_lost + Σ provider_baseline + Σ consumer_baseline
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::RequestKind;
use crate::scalar::Scalar;

/// Relative slack applied when deciding whether an accumulated quantity has
/// reached a requested threshold. Absorbs summation rounding only.
pub const THRESHOLD_RTOL: f64 = 1e-12;

const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatteryError {
    #[error("invalid battery: {0}")]
    InvalidBattery(String),
    #[error("invalid technology parameters: {0}")]
    InvalidParams(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("provider battery is depleted")]
    ProviderDepleted,
    #[error("outside the constant-rate regime: {0}")]
    OutsideConstantRegime(String),
}

/// A device's charge store. The level is derived from charge and capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState<S = f64> {
    capacity_mah: S,
    charge_mah: S,
}

impl<S: Scalar> BatteryState<S> {
    pub fn new(capacity_mah: S, charge_mah: S) -> Result<Self, BatteryError> {
        if !(capacity_mah.is_finite() && capacity_mah > S::zero()) {
            return Err(BatteryError::InvalidBattery(format!(
                "capacity must be positive, got {capacity_mah}"
            )));
        }
        if !(charge_mah.is_finite() && charge_mah >= S::zero() && charge_mah <= capacity_mah) {
            return Err(BatteryError::InvalidBattery(format!(
                "charge {charge_mah} outside [0, {capacity_mah}]"
            )));
        }
        Ok(Self {
            capacity_mah,
            charge_mah,
        })
    }

    /// Battery of the given capacity filled to `level_pct` percent.
    pub fn at_level(capacity_mah: S, level_pct: S) -> Result<Self, BatteryError> {
        let hundred = S::lit(100.0);
        if !(level_pct.is_finite() && level_pct >= S::zero() && level_pct <= hundred) {
            return Err(BatteryError::InvalidBattery(format!(
                "level {level_pct} outside [0, 100]"
            )));
        }
        let charge = (capacity_mah * level_pct / hundred).min(capacity_mah);
        Self::new(capacity_mah, charge)
    }

    pub fn full(capacity_mah: S) -> Result<Self, BatteryError> {
        Self::new(capacity_mah, capacity_mah)
    }

    pub fn capacity_mah(&self) -> S {
        self.capacity_mah
    }

    pub fn charge_mah(&self) -> S {
        self.charge_mah
    }

    pub fn level_pct(&self) -> S {
        S::lit(100.0) * self.charge_mah / self.capacity_mah
    }

    pub fn headroom_mah(&self) -> S {
        self.capacity_mah - self.charge_mah
    }

    pub fn is_empty(&self) -> bool {
        self.charge_mah <= S::zero()
    }

    pub fn is_full(&self) -> bool {
        self.charge_mah >= self.capacity_mah
    }

    fn with_charge(self, charge_mah: S) -> Self {
        Self {
            capacity_mah: self.capacity_mah,
            charge_mah: charge_mah.max(S::zero()).min(self.capacity_mah),
        }
    }
}

/// The charging technologies compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Technology {
    Cable,
    Reverse,
    WirelessDistance,
}

impl Technology {
    pub const ALL: [Technology; 3] = [
        Technology::Cable,
        Technology::Reverse,
        Technology::WirelessDistance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Cable => "cable",
            Technology::Reverse => "reverse",
            Technology::WirelessDistance => "wireless_distance",
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technology {
    type Err = BatteryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cable" => Ok(Technology::Cable),
            "reverse" => Ok(Technology::Reverse),
            "wireless_distance" | "wireless" => Ok(Technology::WirelessDistance),
            other => Err(BatteryError::InvalidParams(format!(
                "unknown technology `{other}`"
            ))),
        }
    }
}

/// Transfer characteristics of one charging technology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TechnologyParams<S = f64> {
    pub technology: Technology,
    /// Provider-side output current in mA.
    pub transfer_rate_ma: S,
    /// Fraction of provider output that reaches the consumer, in (0, 1].
    pub efficiency: S,
    /// Consumer level at which intake starts tapering linearly to zero at 100%.
    pub taper_start_pct: S,
    /// Coil separation. Recorded only; it does not enter the dynamics.
    pub distance_m: S,
}

impl<S: Scalar> TechnologyParams<S> {
    /// Default parameters. Only the efficiency ordering (reverse lowest) is a
    /// constraint; absolute values are configuration.
    pub fn defaults(technology: Technology) -> Self {
        let (efficiency, distance_m) = match technology {
            Technology::Cable => (0.90, 0.0),
            Technology::WirelessDistance => (0.80, 0.02),
            Technology::Reverse => (0.70, 0.0),
        };
        Self {
            technology,
            transfer_rate_ma: S::lit(1200.0),
            efficiency: S::lit(efficiency),
            taper_start_pct: S::lit(90.0),
            distance_m: S::lit(distance_m),
        }
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        let bad = |what: &str| Err(BatteryError::InvalidParams(what.to_string()));
        if !(self.transfer_rate_ma.is_finite() && self.transfer_rate_ma > S::zero()) {
            return bad("transfer_rate_ma must be > 0");
        }
        if !(self.efficiency > S::zero() && self.efficiency <= S::one()) {
            return bad("efficiency must be in (0, 1]");
        }
        if !(self.taper_start_pct > S::zero() && self.taper_start_pct <= S::lit(100.0)) {
            return bad("taper_start_pct must be in (0, 100]");
        }
        if !(self.distance_m.is_finite() && self.distance_m >= S::zero()) {
            return bad("distance_m must be >= 0");
        }
        Ok(())
    }
}

/// Device self-consumption while powered on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrainParams<S = f64> {
    pub baseline_ma: S,
}

impl<S: Scalar> DrainParams<S> {
    pub fn new(baseline_ma: S) -> Result<Self, BatteryError> {
        if !(baseline_ma.is_finite() && baseline_ma >= S::zero()) {
            return Err(BatteryError::InvalidParams(format!(
                "baseline_ma must be >= 0, got {baseline_ma}"
            )));
        }
        Ok(Self { baseline_ma })
    }

    pub fn none() -> Self {
        Self {
            baseline_ma: S::zero(),
        }
    }

    pub fn default_device() -> Self {
        Self {
            baseline_ma: S::lit(40.0),
        }
    }
}

/// Charge flows of a single transfer tick. All fields are non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransferTick<S = f64> {
    pub mah_out: S,
    pub mah_in: S,
    pub mah_lost: S,
    pub provider_baseline_mah: S,
    pub consumer_baseline_mah: S,
}

fn hours<S: Scalar>(dt_s: S) -> S {
    dt_s / S::lit(SECONDS_PER_HOUR)
}

/// Applies `dt_s` seconds of self-drain. Returns the new state and the charge
/// actually drained (clamped at empty).
pub fn drain_baseline<S: Scalar>(
    battery: BatteryState<S>,
    drain: DrainParams<S>,
    dt_s: S,
) -> (BatteryState<S>, S) {
    let wanted = (drain.baseline_ma * hours(dt_s)).max(S::zero());
    let drained = wanted.min(battery.charge_mah);
    (battery.with_charge(battery.charge_mah - drained), drained)
}

/// Provider output current given the consumer's level: constant below the
/// taper start, then linear down to zero at 100%.
pub fn effective_rate<S: Scalar>(params: &TechnologyParams<S>, consumer_level_pct: S) -> S {
    let hundred = S::lit(100.0);
    let level = consumer_level_pct.max(S::zero()).min(hundred);
    if level < params.taper_start_pct {
        params.transfer_rate_ma
    } else if level >= hundred {
        S::zero()
    } else {
        params.transfer_rate_ma * (hundred - level) / (hundred - params.taper_start_pct)
    }
}

/// Advances a provider/consumer pair by one tick.
///
/// Baseline drains are applied to both peers first; the transfer then uses the
/// drained provider charge and the drained consumer level.
pub fn transfer_tick<S: Scalar>(
    provider: BatteryState<S>,
    consumer: BatteryState<S>,
    params: &TechnologyParams<S>,
    provider_drain: DrainParams<S>,
    consumer_drain: DrainParams<S>,
    dt_s: S,
) -> Result<(BatteryState<S>, BatteryState<S>, TransferTick<S>), BatteryError> {
    if !(dt_s.is_finite() && dt_s > S::zero()) {
        return Err(BatteryError::InvalidTimeStep(dt_s.to_f64_lossy()));
    }
    if provider.is_empty() {
        return Err(BatteryError::ProviderDepleted);
    }
    let (provider, provider_baseline_mah) = drain_baseline(provider, provider_drain, dt_s);
    let (consumer, consumer_baseline_mah) = drain_baseline(consumer, consumer_drain, dt_s);

    let rate = effective_rate(params, consumer.level_pct());
    let mah_out = provider.charge_mah().min(rate * hours(dt_s));
    let mah_in = (params.efficiency * mah_out).min(consumer.headroom_mah());
    let tick = TransferTick {
        mah_out,
        mah_in,
        mah_lost: mah_out - mah_in,
        provider_baseline_mah,
        consumer_baseline_mah,
    };
    Ok((
        provider.with_charge(provider.charge_mah() - mah_out),
        consumer.with_charge(consumer.charge_mah() + mah_in),
        tick,
    ))
}

/// Closed-form session result in the constant-rate regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<S = f64> {
    pub provider_charge_mah: S,
    pub consumer_charge_mah: S,
    pub ticks: u64,
    pub delivered_mah: S,
}

/// Smallest tick count `n` with `n * per_tick` reaching `target`.
pub fn ticks_to_reach<S: Scalar>(target: S, per_tick: S) -> Option<u64> {
    if target <= S::zero() {
        return Some(0);
    }
    if !(per_tick > S::zero()) {
        return None;
    }
    let n = (target * (S::one() - S::lit(THRESHOLD_RTOL)) / per_tick).ceil();
    n.to_u64()
}

/// Predicts the outcome of a session that never leaves the constant-rate
/// regime, without iterating ticks.
#[allow(clippy::too_many_arguments)]
pub fn predict_outcome<S: Scalar>(
    provider: BatteryState<S>,
    consumer: BatteryState<S>,
    params: &TechnologyParams<S>,
    provider_drain: DrainParams<S>,
    consumer_drain: DrainParams<S>,
    kind: RequestKind,
    value: S,
    dt_s: S,
) -> Result<Prediction<S>, BatteryError> {
    let outside = |why: String| Err(BatteryError::OutsideConstantRegime(why));
    if !(dt_s.is_finite() && dt_s > S::zero()) {
        return Err(BatteryError::InvalidTimeStep(dt_s.to_f64_lossy()));
    }
    let h = hours(dt_s);
    let provider_per_tick = provider_drain.baseline_ma * h;
    let consumer_per_tick = consumer_drain.baseline_ma * h;
    let out = params.transfer_rate_ma * h;
    let inn = params.efficiency * out;

    let ticks = match kind {
        RequestKind::Duration => ticks_to_reach(value, dt_s),
        RequestKind::Amount => ticks_to_reach(value, inn),
    }
    .ok_or_else(|| BatteryError::OutsideConstantRegime("tick count not finite".into()))?;
    let n = S::from_u64(ticks).expect("tick count representable");

    let provider_end = provider.charge_mah() - n * (provider_per_tick + out);
    let consumer_end = consumer.charge_mah() + n * (inn - consumer_per_tick);
    if ticks > 0 {
        if provider.is_empty() {
            return outside("provider starts empty".into());
        }
        // The provider must still be able to supply the full `out` on the last tick.
        if provider_end < S::zero() {
            return outside(format!(
                "provider would deplete (end charge {provider_end})"
            ));
        }
        let taper_charge = consumer.capacity_mah() * params.taper_start_pct / S::lit(100.0);
        let highest = consumer.charge_mah().max(consumer_end);
        if highest >= taper_charge {
            return outside(format!(
                "consumer reaches the taper zone ({} >= {} mAh)",
                highest, taper_charge
            ));
        }
        let lowest = (consumer.charge_mah() - consumer_per_tick).min(consumer_end - inn);
        if lowest < S::zero() {
            return outside("consumer baseline drain would clamp at empty".into());
        }
    }
    Ok(Prediction {
        provider_charge_mah: provider_end,
        consumer_charge_mah: consumer_end,
        ticks,
        delivered_mah: n * inn,
    })
}
