//! Timestamps and clocks.
//!
//! All time in the crate is integer milliseconds. Wall-clock and virtual time
//! share the same representation so the log and the data mover can be driven
//! by the simulator.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const MS_PER_SECOND: i64 = 1_000;
pub const MS_PER_MINUTE: i64 = 60_000;
pub const MS_PER_HOUR: i64 = 3_600_000;

/// Milliseconds since an arbitrary epoch (Unix epoch for wall clocks, scenario
/// start for virtual clocks). May be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_minutes(min: f64) -> Self {
        Timestamp(minutes_to_ms(min))
    }

    pub fn from_hours(h: f64) -> Self {
        Timestamp(hours_to_ms(h))
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn as_minutes(self) -> f64 {
        self.0 as f64 / MS_PER_MINUTE as f64
    }

    /// Signed milliseconds from `earlier` to `self`.
    pub fn since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;
    fn add(self, ms: i64) -> Timestamp {
        Timestamp(self.0 + ms)
    }
}

impl Sub<i64> for Timestamp {
    type Output = Timestamp;
    fn sub(self, ms: i64) -> Timestamp {
        Timestamp(self.0 - ms)
    }
}

impl Sub for Timestamp {
    type Output = i64;
    fn sub(self, rhs: Timestamp) -> i64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Rounds to the nearest millisecond (1 ms is the virtual clock resolution).
pub fn minutes_to_ms(min: f64) -> i64 {
    (min * MS_PER_MINUTE as f64).round() as i64
}

pub fn hours_to_ms(h: f64) -> i64 {
    (h * MS_PER_HOUR as f64).round() as i64
}

pub fn ms_to_minutes(ms: i64) -> f64 {
    ms as f64 / MS_PER_MINUTE as f64
}

/// Source of time, plus the ability to wait. Virtual clocks implement
/// `sleep` by advancing themselves.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0);
        Timestamp(ms)
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually driven clock. Cloning shares the underlying time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock {
    now: Arc<AtomicI64>,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock { now: Arc::new(AtomicI64::new(start.0)) }
    }

    pub fn set(&self, t: Timestamp) {
        self.now.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: i64) -> Timestamp {
        Timestamp(self.now.fetch_add(ms, Ordering::SeqCst) + ms)
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now.load(Ordering::SeqCst))
    }

    fn sleep(&self, d: Duration) {
        self.advance(d.as_millis() as i64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_minutes_convert_exactly() {
        assert_eq!(minutes_to_ms(134.8), 8_088_000);
        assert_eq!(minutes_to_ms(54.8), 3_288_000);
        assert_eq!(minutes_to_ms(15.9), 954_000);
        assert_eq!(hours_to_ms(17.0), 61_200_000);
    }

    #[test]
    fn manual_clock_sleep_advances() {
        let c = ManualClock::new(Timestamp(5));
        c.sleep(Duration::from_millis(10));
        assert_eq!(c.now(), Timestamp(15));
        let shared = c.clone();
        shared.advance(5);
        assert_eq!(c.now(), Timestamp(20));
    }
}
