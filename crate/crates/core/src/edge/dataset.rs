use sha2::{Digest, Sha256};

use super::EdgeError;
use crate::battery::{DrainParams, TechnologyParams};
use crate::monitor::{
    check_trace, compute_metrics, pair_records, parse_trace_csv, trace_csv, Capacities,
    SessionMetrics, TracePair,
};
use crate::protocol::{Demand, EnergyRequest, RequestKind, TerminalReason};
use crate::scalar::close;
use crate::transport::ClockMode;

pub const META_FORMAT: &str = "energy-share-session/1";

/// Tolerance for recomputing stored metrics from the records.
pub const METRIC_RTOL: f64 = 1e-9;

/// Everything collected for one session, as uploaded to the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub session_id: String,
    pub request: EnergyRequest,
    pub provider_id: String,
    pub consumer_id: String,
    pub technology: TechnologyParams,
    pub provider_drain: DrainParams,
    pub consumer_drain: DrainParams,
    pub capacities: Capacities,
    pub interval_s: f64,
    pub clock_mode: ClockMode,
    pub records: Vec<TracePair>,
    pub metrics: SessionMetrics,
    pub terminal_reason: TerminalReason,
}

/// Listing entry for a stored session.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub session_id: String,
    pub consumer_id: String,
    pub provider_id: String,
    pub technology: String,
    pub terminal_reason: TerminalReason,
    pub energy_loss_mah: f64,
}

impl SessionDataset {
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            session_id: self.session_id.clone(),
            consumer_id: self.consumer_id.clone(),
            provider_id: self.provider_id.clone(),
            technology: self.technology.technology.to_string(),
            terminal_reason: self.terminal_reason,
            energy_loss_mah: self.metrics.energy_loss_mah,
        }
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn meta_text(&self) -> String {
        let t = &self.technology;
        let m = &self.metrics;
        let lines: Vec<(&str, String)> = vec![
            ("format", META_FORMAT.to_string()),
            ("session_id", self.session_id.clone()),
            ("request_id", self.request.request_id.clone()),
            ("consumer_id", self.consumer_id.clone()),
            ("provider_id", self.provider_id.clone()),
            ("request_kind", self.request.kind().to_string()),
            ("request_value", self.request.demand.value().to_string()),
            ("technology", t.technology.to_string()),
            ("transfer_rate_ma", t.transfer_rate_ma.to_string()),
            ("efficiency", t.efficiency.to_string()),
            ("taper_start_pct", t.taper_start_pct.to_string()),
            ("distance_m", t.distance_m.to_string()),
            (
                "provider_baseline_ma",
                self.provider_drain.baseline_ma.to_string(),
            ),
            (
                "consumer_baseline_ma",
                self.consumer_drain.baseline_ma.to_string(),
            ),
            (
                "provider_capacity_mah",
                self.capacities.provider_mah.to_string(),
            ),
            (
                "consumer_capacity_mah",
                self.capacities.consumer_mah.to_string(),
            ),
            ("interval_s", self.interval_s.to_string()),
            ("clock", self.clock_mode.as_str().to_string()),
            ("record_pairs", self.records.len().to_string()),
            ("provider_loss_mah", m.provider_loss_mah.to_string()),
            ("consumer_gain_mah", m.consumer_gain_mah.to_string()),
            ("energy_loss_mah", m.energy_loss_mah.to_string()),
            ("duration_s", m.duration_s.to_string()),
            ("terminal_reason", self.terminal_reason.to_string()),
        ];
        lines
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn trace_text(&self) -> String {
        trace_csv(&self.records)
    }

    /// SHA-256 over the canonical encoding (meta followed by trace).
    pub fn digest(&self) -> String {
        digest_of(&self.meta_text(), &self.trace_text())
    }

    pub fn decode(meta: &str, trace: &str) -> Result<Self, EdgeError> {
        let bad = |m: String| EdgeError::Malformed(m);
        let mut lines = meta.lines();
        let mut take = |key: &str| -> Result<&str, EdgeError> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("meta: missing `{key}`")))?;
            match line.split_once('=') {
                Some((k, v)) if k == key => Ok(v),
                _ => Err(bad(format!("meta: expected `{key}`, found `{line}`"))),
            }
        };
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| bad(format!("meta: bad number `{v}`")))
        };

        if take("format")? != META_FORMAT {
            return Err(bad("meta: unsupported format".into()));
        }
        let session_id = take("session_id")?.to_string();
        let request_id = take("request_id")?.to_string();
        let consumer_id = take("consumer_id")?.to_string();
        let provider_id = take("provider_id")?.to_string();
        let kind: RequestKind = take("request_kind")?
            .parse()
            .map_err(|e| bad(format!("meta: {e}")))?;
        let value = num(take("request_value")?)?;
        let technology = take("technology")?
            .parse()
            .map_err(|e| bad(format!("meta: {e}")))?;
        let technology = TechnologyParams {
            technology,
            transfer_rate_ma: num(take("transfer_rate_ma")?)?,
            efficiency: num(take("efficiency")?)?,
            taper_start_pct: num(take("taper_start_pct")?)?,
            distance_m: num(take("distance_m")?)?,
        };
        let provider_drain = DrainParams {
            baseline_ma: num(take("provider_baseline_ma")?)?,
        };
        let consumer_drain = DrainParams {
            baseline_ma: num(take("consumer_baseline_ma")?)?,
        };
        let capacities = Capacities {
            provider_mah: num(take("provider_capacity_mah")?)?,
            consumer_mah: num(take("consumer_capacity_mah")?)?,
        };
        let interval_s = num(take("interval_s")?)?;
        let clock_mode = match take("clock")? {
            "virtual" => ClockMode::Virtual,
            "wall" => ClockMode::Wall,
            other => return Err(bad(format!("meta: unknown clock `{other}`"))),
        };
        let record_pairs: usize = take("record_pairs")?
            .parse()
            .map_err(|_| bad("meta: bad record_pairs".into()))?;
        let provider_loss_mah = num(take("provider_loss_mah")?)?;
        let consumer_gain_mah = num(take("consumer_gain_mah")?)?;
        let energy_loss_mah = num(take("energy_loss_mah")?)?;
        let duration_s = num(take("duration_s")?)?;
        let terminal_reason: TerminalReason = take("terminal_reason")?
            .parse()
            .map_err(|e| bad(format!("meta: {e}")))?;
        if let Some(extra) = lines.next() {
            return Err(bad(format!("meta: unexpected line `{extra}`")));
        }

        let records = pair_records(&parse_trace_csv(trace).map_err(|e| bad(e.to_string()))?)
            .map_err(|e| bad(e.to_string()))?;
        if records.len() != record_pairs {
            return Err(bad(format!(
                "meta announces {record_pairs} pairs, trace has {}",
                records.len()
            )));
        }
        Ok(Self {
            session_id,
            request: EnergyRequest {
                request_id,
                consumer_id: consumer_id.clone(),
                demand: Demand::new(kind, value).map_err(|e| bad(e.to_string()))?,
            },
            provider_id,
            consumer_id,
            technology,
            provider_drain,
            consumer_drain,
            capacities,
            interval_s,
            clock_mode,
            records,
            metrics: SessionMetrics {
                provider_loss_mah,
                consumer_gain_mah,
                energy_loss_mah,
                duration_s,
                terminal_reason: Some(terminal_reason),
            },
            terminal_reason,
        })
    }

    /// Alignment and metric recomputation gate applied before persisting.
    pub fn validate(&self) -> Result<(), EdgeError> {
        let fail = |m: String| Err(EdgeError::ValidationFailed(m));
        crate::protocol::validate_id(&self.session_id)
            .map_err(|e| EdgeError::ValidationFailed(e.to_string()))?;
        if self.request.consumer_id != self.consumer_id {
            return fail("request consumer does not match dataset consumer".into());
        }
        if let Err(e) = self.technology.validate() {
            return fail(e.to_string());
        }
        check_trace(&self.records, self.interval_s, self.clock_mode)
            .map_err(|e| EdgeError::ValidationFailed(e.to_string()))?;
        let first = &self.records[0];
        if first.provider.session_id != self.session_id
            || first.provider.device_id != self.provider_id
            || first.consumer.device_id != self.consumer_id
        {
            return fail("records do not belong to this session".into());
        }
        for pair in &self.records {
            for (r, cap) in [
                (&pair.provider, self.capacities.provider_mah),
                (&pair.consumer, self.capacities.consumer_mah),
            ] {
                if !(r.battery_charge_mah >= 0.0 && r.battery_charge_mah <= cap) {
                    return fail(format!("charge out of range at tick {}", r.tick_index));
                }
                if !close(
                    r.battery_level_pct,
                    100.0 * r.battery_charge_mah / cap,
                    METRIC_RTOL,
                ) {
                    return fail(format!("level inconsistent at tick {}", r.tick_index));
                }
            }
        }
        let recomputed = compute_metrics(&self.records, &self.capacities)
            .map_err(|e| EdgeError::ValidationFailed(e.to_string()))?;
        let m = &self.metrics;
        let same = close(
            recomputed.provider_loss_mah,
            m.provider_loss_mah,
            METRIC_RTOL,
        ) && close(
            recomputed.consumer_gain_mah,
            m.consumer_gain_mah,
            METRIC_RTOL,
        ) && close(recomputed.energy_loss_mah, m.energy_loss_mah, METRIC_RTOL)
            && close(recomputed.duration_s, m.duration_s, METRIC_RTOL);
        if !same {
            return fail("metrics do not match the records".into());
        }
        if m.terminal_reason != Some(self.terminal_reason) {
            return fail("metrics carry a different terminal reason".into());
        }
        Ok(())
    }
}

pub fn digest_of(meta: &str, trace: &str) -> String {
    let mut h = Sha256::new();
    h.update(meta.as_bytes());
    h.update([0u8]);
    h.update(trace.as_bytes());
    hex::encode(h.finalize())
}
