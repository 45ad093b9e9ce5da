use serde::{Deserialize, Serialize};
use std::fmt;

/// Simulated wall-clock time in microseconds since the start of the run.
/// This is the ground-truth time axis; node-local clocks drift around it.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: u64) -> SimTime {
        SimTime(ms * 1_000)
    }

    pub fn from_secs(s: u64) -> SimTime {
        SimTime(s * 1_000_000)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn plus(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }

    /// Microseconds from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_and_arithmetic() {
        assert_eq!(SimTime::from_ms(3).micros(), 3_000);
        assert_eq!(SimTime::from_secs(2).micros(), 2_000_000);
        assert_eq!(SimTime(10).plus(5), SimTime(15));
        assert_eq!(SimTime(15).since(SimTime(10)), 5);
        assert_eq!(SimTime(10).since(SimTime(15)), 0);
        assert!(SimTime(1) < SimTime(2));
    }
}
