//! Closest-provider selection with deterministic tie-breaking and the
//! walk-the-ranking retry policy used after a provider rejects.

use std::cmp::Ordering;

use thiserror::Error;

use crate::battery::Technology;
use crate::scalar::Scalar;

/// Providers accept a request iff their level is at least this (percent).
pub const DEFAULT_ACCEPT_THRESHOLD_PCT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("no provider available")]
    NoProviderAvailable,
}

/// 2-D coordinates in meters within the confined area.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position<S = f64> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Position<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_sq(&self, other: &Position<S>) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &Position<S>) -> S {
        self.distance_sq(other).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderAdvert<S = f64> {
    pub provider_id: String,
    pub position: Position<S>,
    pub battery_level_pct: S,
    pub technology: Technology,
    pub available: bool,
}

impl<S: Scalar> ProviderAdvert<S> {
    pub fn is_valid(&self) -> bool {
        self.position.is_finite()
            && self.battery_level_pct >= S::zero()
            && self.battery_level_pct <= S::lit(100.0)
    }
}

/// Available providers ordered by Euclidean distance, ties by smallest id.
///
/// Adverts with non-finite positions or out-of-range levels are skipped.
pub fn rank_providers<S: Scalar>(
    consumer: Position<S>,
    adverts: &[ProviderAdvert<S>],
) -> Vec<String> {
    let mut candidates: Vec<(S, &str)> = adverts
        .iter()
        .filter(|a| a.available && a.is_valid())
        .map(|a| (a.position.distance_sq(&consumer), a.provider_id.as_str()))
        .collect();
    // squared distance preserves the order of the Euclidean distance
    candidates.sort_by(|(da, ia), (db, ib)| {
        da.partial_cmp(db)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ia.cmp(ib))
    });
    candidates
        .into_iter()
        .map(|(_, id)| id.to_string())
        .collect()
}

pub fn select_provider<S: Scalar>(
    consumer: Position<S>,
    adverts: &[ProviderAdvert<S>],
) -> Result<String, MatchError> {
    rank_providers(consumer, adverts)
        .into_iter()
        .next()
        .ok_or(MatchError::NoProviderAvailable)
}

pub fn next_after_reject<T: AsRef<str>>(
    ranking: &[String],
    rejected_so_far: &[T],
) -> Result<String, MatchError> {
    ranking
        .iter()
        .find(|id| !rejected_so_far.iter().any(|r| r.as_ref() == id.as_str()))
        .cloned()
        .ok_or(MatchError::NoProviderAvailable)
}

/// Scripted provider policy.
pub fn accepts_request<S: Scalar>(battery_level_pct: S, accept_threshold_pct: S) -> bool {
    battery_level_pct >= accept_threshold_pct
}
