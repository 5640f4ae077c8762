use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::ScenarioError;
use crate::edge::SessionDataset;
use crate::protocol::TerminalReason;

pub const REPORT_CSV_HEADER: &str = "run_id,technology,start_level_pct,duration_s,provider_loss_mah,consumer_gain_mah,energy_loss_mah,terminal_reason";

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub run_id: String,
    pub dataset: SessionDataset,
}

/// Reads a run directory written by [`write_run`](super::write_run).
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunArtifact, ScenarioError> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        fs::read_to_string(dir.join(name))
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.join(name).display())))
    };
    let dataset = SessionDataset::decode(&read(super::META_FILE)?, &read(super::TRACE_FILE)?)?;
    let run_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or(&dataset.session_id)
        .to_string();
    Ok(RunArtifact { run_id, dataset })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run_id: String,
    pub technology: String,
    pub start_level_pct: f64,
    pub duration_s: f64,
    pub provider_loss_mah: f64,
    pub consumer_gain_mah: f64,
    pub energy_loss_mah: f64,
    pub terminal_reason: TerminalReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Tick-aligned level curves: `(run_id, consumer levels, provider levels)`.
    pub curves: Vec<(String, Vec<f64>, Vec<f64>)>,
}

pub fn compare(runs: &[RunArtifact]) -> Result<Comparison, ScenarioError> {
    if runs.len() < 2 {
        return Err(ScenarioError::IncompatibleRuns(format!(
            "need at least 2 runs, got {}",
            runs.len()
        )));
    }
    let interval = runs[0].dataset.interval_s;
    if let Some(other) = runs.iter().find(|r| r.dataset.interval_s != interval) {
        return Err(ScenarioError::IncompatibleRuns(format!(
            "run `{}` uses interval {} s, `{}` uses {} s",
            other.run_id, other.dataset.interval_s, runs[0].run_id, interval
        )));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = runs.iter().find(|r| !seen.insert(r.run_id.as_str())) {
        return Err(ScenarioError::IncompatibleRuns(format!(
            "duplicate run id `{}`",
            dup.run_id
        )));
    }
    let rows = runs
        .iter()
        .map(|r| {
            let d = &r.dataset;
            ComparisonRow {
                run_id: r.run_id.clone(),
                technology: d.technology.technology.to_string(),
                start_level_pct: d.records[0].consumer.battery_level_pct,
                duration_s: d.metrics.duration_s,
                provider_loss_mah: d.metrics.provider_loss_mah,
                consumer_gain_mah: d.metrics.consumer_gain_mah,
                energy_loss_mah: d.metrics.energy_loss_mah,
                terminal_reason: d.terminal_reason,
            }
        })
        .collect();
    let curves = runs
        .iter()
        .map(|r| {
            let recs = &r.dataset.records;
            (
                r.run_id.clone(),
                recs.iter().map(|p| p.consumer.battery_level_pct).collect(),
                recs.iter().map(|p| p.provider.battery_level_pct).collect(),
            )
        })
        .collect();
    Ok(Comparison { rows, curves })
}

impl Comparison {
    pub fn report_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record(REPORT_CSV_HEADER.split(','))
            .expect("write to memory");
        for r in &self.rows {
            w.write_record([
                r.run_id.clone(),
                r.technology.clone(),
                r.start_level_pct.to_string(),
                r.duration_s.to_string(),
                r.provider_loss_mah.to_string(),
                r.consumer_gain_mah.to_string(),
                r.energy_loss_mah.to_string(),
                r.terminal_reason.to_string(),
            ])
            .expect("write to memory");
        }
        finish(w)
    }

    /// One row per tick; runs that ended earlier leave their cells empty.
    pub fn levels_csv(&self) -> String {
        let mut w = csv_writer();
        let mut header = vec!["tick_index".to_string()];
        for (id, _, _) in &self.curves {
            header.push(format!("{id}:consumer_level_pct"));
            header.push(format!("{id}:provider_level_pct"));
        }
        w.write_record(&header).expect("write to memory");
        let ticks = self
            .curves
            .iter()
            .map(|(_, c, _)| c.len())
            .max()
            .unwrap_or(0);
        for t in 0..ticks {
            let mut row = vec![t.to_string()];
            for (_, c, p) in &self.curves {
                for series in [c, p] {
                    row.push(series.get(t).map(f64::to_string).unwrap_or_default());
                }
            }
            w.write_record(&row).expect("write to memory");
        }
        finish(w)
    }

    pub fn row(&self, run_id: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.run_id == run_id)
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
}

/// Consumer charge gained per minute over the ticks where the consumer stays
/// below the taper start. `None` if fewer than two such ticks exist.
pub fn consumer_gain_per_minute_below_taper(dataset: &SessionDataset) -> Option<f64> {
    let taper = dataset.technology.taper_start_pct;
    let below: Vec<_> = dataset
        .records
        .iter()
        .take_while(|p| p.consumer.battery_level_pct < taper)
        .collect();
    let (first, last) = (below.first()?, below.last()?);
    let minutes = (last.consumer.wall_time_s - first.consumer.wall_time_s) / 60.0;
    if minutes <= 0.0 {
        return None;
    }
    Some((last.consumer.battery_charge_mah - first.consumer.battery_charge_mah) / minutes)
}
