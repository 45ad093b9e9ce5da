use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// Which authority issued a timestamp.
///
/// * `Counter` — the centralized server hands out consecutive integers; total
///   order comes from centralization and costs a roundtrip per timestamp.
/// * `Clock` — nodes read their own bounded-error clocks; ordering costs a
///   commit wait instead of a roundtrip.
/// * `Dual` — bridge used while the cluster moves between the other two: the
///   server answers with max(counter, caller's clock value) + 1, so dual
///   values dominate everything either side has issued.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Counter,
    Clock,
    Dual,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Counter => "counter",
            Mode::Clock => "clock",
            Mode::Dual => "dual",
        };
        f.write_str(s)
    }
}

/// A transaction timestamp. `value` carries the ordering; `err` is the clock
/// uncertainty at issue time (zero for counter-issued values); issuer and
/// sequence break ties so every timestamp is unique and totally ordered.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub value: u64,
    pub err: u64,
    pub mode: Mode,
    pub issuer: u32,
    pub seq: u64,
}

impl Timestamp {
    pub fn new(value: u64, err: u64, mode: Mode, issuer: u32, seq: u64) -> Self {
        Timestamp {
            value,
            err,
            mode,
            issuer,
            seq,
        }
    }

    /// Total order: value first, then issuer and sequence as tie-breaks.
    /// Mode and err deliberately do not participate.
    fn key(&self) -> (u64, u32, u64) {
        (self.value, self.issuer, self.seq)
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}/{}#{}", self.value, self.mode, self.issuer, self.seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_order_value_then_issuer_then_seq() {
        let a = Timestamp::new(10, 0, Mode::Counter, 1, 5);
        let b = Timestamp::new(11, 0, Mode::Counter, 0, 0);
        let c = Timestamp::new(10, 61, Mode::Clock, 2, 1);
        let d = Timestamp::new(10, 61, Mode::Clock, 2, 2);
        assert!(a < b);
        assert!(a < c, "issuer breaks value ties");
        assert!(c < d, "sequence breaks issuer ties");
        let mut v = vec![b, d, a, c];
        v.sort();
        assert_eq!(v, vec![a, c, d, b]);
    }

    #[test]
    fn err_does_not_affect_order() {
        let a = Timestamp::new(10, 0, Mode::Counter, 1, 1);
        let b = Timestamp::new(10, 99, Mode::Clock, 1, 1);
        assert_eq!(a.cmp(&b), Ordering::Equal);
    }
}
