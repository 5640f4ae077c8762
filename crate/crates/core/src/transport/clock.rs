use std::time::{Instant, SystemTime, UNIX_EPOCH};

use super::TransportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Wall,
}

impl ClockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClockMode::Virtual => "virtual",
            ClockMode::Wall => "wall",
        }
    }
}

/// Converts seconds to whole microseconds, the virtual clock's resolution.
pub fn to_micros(seconds: f64) -> u64 {
    (seconds * 1e6).round().max(0.0) as u64
}

/// Simulated time. Only moves when advanced explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VirtualClock {
    now_us: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn now_s(&self) -> f64 {
        self.now_us as f64 / 1e6
    }

    pub fn advance(&mut self, dt_s: f64) -> Result<(), TransportError> {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(TransportError::InvalidStep(dt_s));
        }
        self.now_us += to_micros(dt_s).max(1);
        Ok(())
    }

    /// Moves to `target_us`; earlier targets leave the clock where it is.
    pub fn advance_to_us(&mut self, target_us: u64) {
        self.now_us = self.now_us.max(target_us);
    }
}

/// Real time, optionally accelerated by a pacing factor. Copies share the
/// same origin, so threads holding copies agree on `now_s`.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin_epoch_s: f64,
    origin: Instant,
    pace: f64,
}

impl WallClock {
    pub fn new(pace: f64) -> Self {
        let origin_epoch_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Self {
            origin_epoch_s,
            origin: Instant::now(),
            pace: if pace.is_finite() && pace > 0.0 {
                pace
            } else {
                1.0
            },
        }
    }

    pub fn pace(&self) -> f64 {
        self.pace
    }

    pub fn now_s(&self) -> f64 {
        self.origin_epoch_s + self.origin.elapsed().as_secs_f64() * self.pace
    }

    /// Real duration until scaled time reaches `t_s`.
    pub fn real_until(&self, t_s: f64) -> std::time::Duration {
        let scaled = ((t_s - self.now_s()) / self.pace).max(0.0);
        std::time::Duration::from_secs_f64(scaled)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Clock {
    Virtual(VirtualClock),
    Wall(WallClock),
}

impl Clock {
    pub fn mode(&self) -> ClockMode {
        match self {
            Clock::Virtual(_) => ClockMode::Virtual,
            Clock::Wall(_) => ClockMode::Wall,
        }
    }

    pub fn now_s(&self) -> f64 {
        match self {
            Clock::Virtual(c) => c.now_s(),
            Clock::Wall(c) => c.now_s(),
        }
    }

    pub fn advance(&mut self, dt_s: f64) -> Result<(), TransportError> {
        match self {
            Clock::Virtual(c) => c.advance(dt_s),
            Clock::Wall(_) => Err(TransportError::WallClockNotSteppable),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_one_second() {
        let mut c = Clock::Virtual(VirtualClock::new());
        c.advance(1.0).unwrap();
        assert_eq!(c.now_s(), 1.0);
    }

    #[test]
    fn zero_step_rejected() {
        let mut c = VirtualClock::new();
        assert!(matches!(
            c.advance(0.0),
            Err(TransportError::InvalidStep(_))
        ));
        assert!(c.advance(-1.0).is_err());
        assert_eq!(c.now_s(), 0.0);
    }

    #[test]
    fn wall_clock_not_steppable() {
        let mut c = Clock::Wall(WallClock::new(1.0));
        assert!(matches!(
            c.advance(1.0),
            Err(TransportError::WallClockNotSteppable)
        ));
    }

    #[test]
    fn wall_clock_non_decreasing() {
        let c = WallClock::new(10.0);
        let a = c.now_s();
        let b = c.now_s();
        assert!(b >= a);
    }
}
