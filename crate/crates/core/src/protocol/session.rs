use std::collections::BTreeMap;
use std::fmt;

use super::message::{ProtocolMessage, TerminalReason};
use super::request::{Demand, EnergyRequest};
use super::ProtocolError;
use crate::battery::THRESHOLD_RTOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionStatus {
    Idle,
    Requested,
    Accepted,
    Charging,
    Completed,
    Aborted,
    Rejected,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SessionStatus::Completed | SessionStatus::Aborted | SessionStatus::Rejected
        )
    }
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Decision returned by [`SessionState::is_complete`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Continue,
    Complete(TerminalReason),
}

/// One provider/consumer session as seen by either peer.
///
/// Transitions are pure: every method returns a new value and leaves `self`
/// untouched. Replayed or out-of-order events are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub request: EnergyRequest,
    pub provider_id: String,
    pub status: SessionStatus,
    pub delivered_mah: f64,
    pub elapsed_s: f64,
    pub terminal_reason: Option<TerminalReason>,
}

impl SessionState {
    pub fn new(request: EnergyRequest, provider_id: &str) -> Self {
        Self {
            session_id: Self::id_for(&request.request_id, provider_id),
            request,
            provider_id: provider_id.to_string(),
            status: SessionStatus::Idle,
            delivered_mah: 0.0,
            elapsed_s: 0.0,
            terminal_reason: None,
        }
    }

    /// Session ids are derived so that both peers name the session identically
    /// without an extra round trip.
    pub fn id_for(request_id: &str, provider_id: &str) -> String {
        format!("{request_id}~{provider_id}")
    }

    fn illegal(&self, event: &ProtocolMessage) -> ProtocolError {
        ProtocolError::IllegalTransition {
            state: self.status,
            event: event.type_name().to_string(),
        }
    }

    fn check_correlation(&self, event: &ProtocolMessage) -> Result<(), ProtocolError> {
        let (expected, got) = match (event.request_id(), event.session_id()) {
            (Some(r), _) => (&self.request.request_id, r),
            (_, Some(s)) => (&self.session_id, s),
            _ => unreachable!("every message carries an id"),
        };
        if expected == got {
            Ok(())
        } else {
            Err(ProtocolError::Uncorrelated {
                expected: expected.clone(),
                got: got.to_string(),
            })
        }
    }

    pub fn transition(&self, event: &ProtocolMessage) -> Result<SessionState, ProtocolError> {
        use ProtocolMessage as M;
        use SessionStatus as S;

        self.check_correlation(event)?;
        let mut next = self.clone();
        match (self.status, event) {
            (S::Idle, M::Request { request, .. }) if *request == self.request => {
                next.status = S::Requested;
            }
            (S::Requested, M::Accept { .. }) => next.status = S::Accepted,
            (S::Requested, M::Reject { .. }) => next.status = S::Rejected,
            (S::Accepted, M::StartTransfer { .. }) => next.status = S::Charging,
            (S::Charging, M::MonitorSync { .. }) => {}
            (S::Charging, M::Complete { reason, .. }) if reason.is_completion() => {
                next.status = S::Completed;
                next.terminal_reason = Some(*reason);
            }
            (S::Accepted | S::Charging, M::Abort { reason, .. }) if !reason.is_completion() => {
                next.status = S::Aborted;
                next.terminal_reason = Some(*reason);
            }
            _ => return Err(self.illegal(event)),
        }
        Ok(next)
    }

    /// Accounts one charging tick.
    pub fn record_progress(&self, mah_in: f64, dt_s: f64) -> Result<SessionState, ProtocolError> {
        if self.status != SessionStatus::Charging {
            return Err(ProtocolError::NotCharging(self.status));
        }
        debug_assert!(mah_in >= 0.0 && dt_s >= 0.0);
        let mut next = self.clone();
        next.delivered_mah += mah_in.max(0.0);
        next.elapsed_s += dt_s.max(0.0);
        Ok(next)
    }

    pub fn is_complete(&self) -> Result<Completion, ProtocolError> {
        if self.status != SessionStatus::Charging {
            return Err(ProtocolError::NotCharging(self.status));
        }
        let reached = |have: f64, want: f64| have >= want * (1.0 - THRESHOLD_RTOL);
        Ok(match self.request.demand {
            Demand::Amount { mah } if reached(self.delivered_mah, mah) => {
                Completion::Complete(TerminalReason::AmountDelivered)
            }
            Demand::Duration { seconds } if reached(self.elapsed_s, seconds) => {
                Completion::Complete(TerminalReason::DurationElapsed)
            }
            _ => Completion::Continue,
        })
    }

    pub fn abort_session(&self, reason: TerminalReason) -> Result<SessionState, ProtocolError> {
        self.transition(&ProtocolMessage::Abort {
            session_id: self.session_id.clone(),
            reason,
        })
    }
}

/// All sessions a device knows about, with the one-to-one rule enforced: a
/// provider is in at most one `Charging` session at a time.
#[derive(Debug, Clone, Default)]
pub struct SessionBook {
    sessions: BTreeMap<String, SessionState>,
    charging_by_provider: BTreeMap<String, String>,
}

impl SessionBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, session: SessionState) -> Result<(), ProtocolError> {
        if self.sessions.contains_key(&session.session_id) {
            return Err(ProtocolError::DuplicateSession(session.session_id));
        }
        if session.status == SessionStatus::Charging {
            self.claim(
                &session,
                &ProtocolMessage::StartTransfer {
                    session_id: session.session_id.clone(),
                    interval_s: 0.0,
                },
            )?;
        }
        self.sessions.insert(session.session_id.clone(), session);
        Ok(())
    }

    fn claim(
        &mut self,
        session: &SessionState,
        event: &ProtocolMessage,
    ) -> Result<(), ProtocolError> {
        match self.charging_by_provider.get(&session.provider_id) {
            Some(busy) if *busy != session.session_id => Err(ProtocolError::IllegalTransition {
                state: session.status,
                event: format!("{} (provider busy with {busy})", event.type_name()),
            }),
            _ => {
                self.charging_by_provider
                    .insert(session.provider_id.clone(), session.session_id.clone());
                Ok(())
            }
        }
    }

    pub fn apply(
        &mut self,
        session_id: &str,
        event: &ProtocolMessage,
    ) -> Result<&SessionState, ProtocolError> {
        let current = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ProtocolError::UnknownSession(session_id.to_string()))?;
        let next = current.transition(event)?;
        self.commit(next, event)
    }

    /// Replaces a session with an already-computed successor (progress updates).
    pub fn update(&mut self, next: SessionState) -> Result<&SessionState, ProtocolError> {
        if !self.sessions.contains_key(&next.session_id) {
            return Err(ProtocolError::UnknownSession(next.session_id));
        }
        let event = ProtocolMessage::MonitorSync {
            session_id: next.session_id.clone(),
            tick_index: 0,
            wall_time_s: 0.0,
        };
        self.commit(next, &event)
    }

    fn commit(
        &mut self,
        next: SessionState,
        event: &ProtocolMessage,
    ) -> Result<&SessionState, ProtocolError> {
        if next.status == SessionStatus::Charging {
            self.claim(&next, event)?;
        } else if self.charging_by_provider.get(&next.provider_id) == Some(&next.session_id) {
            self.charging_by_provider.remove(&next.provider_id);
        }
        let id = next.session_id.clone();
        self.sessions.insert(id.clone(), next);
        Ok(&self.sessions[&id])
    }

    pub fn get(&self, session_id: &str) -> Option<&SessionState> {
        self.sessions.get(session_id)
    }

    pub fn charging_session_of(&self, provider_id: &str) -> Option<&str> {
        self.charging_by_provider
            .get(provider_id)
            .map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SessionState> {
        self.sessions.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(demand: Demand) -> EnergyRequest {
        EnergyRequest {
            request_id: "r1".into(),
            consumer_id: "c".into(),
            demand,
        }
    }

    fn at(status: SessionStatus, demand: Demand) -> SessionState {
        SessionState {
            status,
            ..SessionState::new(request(demand), "p")
        }
    }

    fn accept() -> ProtocolMessage {
        ProtocolMessage::Accept {
            request_id: "r1".into(),
        }
    }

    fn start(id: &str) -> ProtocolMessage {
        ProtocolMessage::StartTransfer {
            session_id: id.into(),
            interval_s: 1.0,
        }
    }

    const HALF_HOUR: Demand = Demand::Duration { seconds: 1800.0 };

    #[test]
    fn requested_accept() {
        let s = at(SessionStatus::Requested, HALF_HOUR);
        assert_eq!(
            s.transition(&accept()).unwrap().status,
            SessionStatus::Accepted
        );
    }

    #[test]
    fn requested_reject() {
        let s = at(SessionStatus::Requested, HALF_HOUR);
        let e = ProtocolMessage::Reject {
            request_id: "r1".into(),
        };
        assert_eq!(s.transition(&e).unwrap().status, SessionStatus::Rejected);
    }

    #[test]
    fn completed_start_is_illegal() {
        let s = at(SessionStatus::Completed, HALF_HOUR);
        assert!(matches!(
            s.transition(&start(&s.session_id)),
            Err(ProtocolError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn accept_after_reject_is_illegal() {
        let s = at(SessionStatus::Rejected, HALF_HOUR);
        assert!(s.transition(&accept()).is_err());
    }

    #[test]
    fn replayed_accept_is_illegal() {
        let s = at(SessionStatus::Requested, HALF_HOUR);
        let s = s.transition(&accept()).unwrap();
        assert!(s.transition(&accept()).is_err());
    }

    #[test]
    fn uncorrelated_event_rejected() {
        let s = at(SessionStatus::Accepted, HALF_HOUR);
        assert!(matches!(
            s.transition(&start("other")),
            Err(ProtocolError::Uncorrelated { .. })
        ));
    }

    #[test]
    fn duration_completes_at_requested_time() {
        let s = at(SessionStatus::Charging, HALF_HOUR);
        let s = s.record_progress(0.0, 1800.0).unwrap();
        assert_eq!(
            s.is_complete().unwrap(),
            Completion::Complete(TerminalReason::DurationElapsed)
        );
    }

    #[test]
    fn amount_threshold() {
        let s = at(SessionStatus::Charging, Demand::Amount { mah: 1000.0 });
        let below = s.record_progress(999.9, 1.0).unwrap();
        assert_eq!(below.is_complete().unwrap(), Completion::Continue);
        let above = s.record_progress(1000.2, 1.0).unwrap();
        assert_eq!(
            above.is_complete().unwrap(),
            Completion::Complete(TerminalReason::AmountDelivered)
        );
    }

    #[test]
    fn is_complete_requires_charging() {
        let s = at(SessionStatus::Accepted, HALF_HOUR);
        assert_eq!(
            s.is_complete(),
            Err(ProtocolError::NotCharging(SessionStatus::Accepted))
        );
        assert!(s.record_progress(1.0, 1.0).is_err());
    }

    #[test]
    fn abort_paths() {
        let charging = at(SessionStatus::Charging, HALF_HOUR);
        let aborted = charging
            .abort_session(TerminalReason::ProviderDepleted)
            .unwrap();
        assert_eq!(aborted.status, SessionStatus::Aborted);
        assert_eq!(
            aborted.terminal_reason,
            Some(TerminalReason::ProviderDepleted)
        );

        let accepted = at(SessionStatus::Accepted, HALF_HOUR);
        let aborted = accepted
            .abort_session(TerminalReason::ConsumerCancelled)
            .unwrap();
        assert_eq!(aborted.status, SessionStatus::Aborted);

        let done = at(SessionStatus::Completed, HALF_HOUR);
        assert!(done.abort_session(TerminalReason::TransportLost).is_err());
    }

    #[test]
    fn book_enforces_one_to_one() {
        let mut book = SessionBook::new();
        let a = at(SessionStatus::Accepted, HALF_HOUR);
        let mut b = at(SessionStatus::Accepted, HALF_HOUR);
        b.request.request_id = "r2".into();
        b.session_id = SessionState::id_for("r2", "p");
        let (a_id, b_id) = (a.session_id.clone(), b.session_id.clone());
        book.insert(a).unwrap();
        book.insert(b).unwrap();
        book.apply(&a_id, &start(&a_id)).unwrap();
        assert!(matches!(
            book.apply(&b_id, &start(&b_id)),
            Err(ProtocolError::IllegalTransition { .. })
        ));
        assert_eq!(book.charging_session_of("p"), Some(a_id.as_str()));
        book.apply(
            &a_id,
            &ProtocolMessage::Complete {
                session_id: a_id.clone(),
                reason: TerminalReason::DurationElapsed,
            },
        )
        .unwrap();
        assert_eq!(book.charging_session_of("p"), None);
        book.apply(&b_id, &start(&b_id)).unwrap();
    }
}
