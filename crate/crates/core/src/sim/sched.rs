use super::time::SimTime;
use crate::cluster::topology::NodeId;
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

/// Handle for cancelling a scheduled event.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventId(pub u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    owner: Option<NodeId>,
    event: E,
}

// Ordering ignores the payload: (time, insertion sequence) is a total order
// because sequence numbers are unique. BinaryHeap is a max-heap, so compare
// reversed.
impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Deterministic event queue: events fire in (time, insertion order). Two
/// events at the same instant fire in the order they were scheduled.
pub struct Scheduler<E> {
    now: SimTime,
    heap: BinaryHeap<Entry<E>>,
    next_seq: u64,
    cancelled: BTreeSet<u64>,
}

pub struct Fired<E> {
    pub at: SimTime,
    pub owner: Option<NodeId>,
    pub event: E,
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            heap: BinaryHeap::new(),
            next_seq: 0,
            cancelled: BTreeSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedule `event` at absolute time `at` (>= now). `owner` ties the
    /// event's fate to a node: crashing the node cancels it.
    pub fn schedule_at(&mut self, at: SimTime, owner: Option<NodeId>, event: E) -> EventId {
        debug_assert!(at >= self.now, "scheduling into the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            at: at.max(self.now),
            seq,
            owner,
            event,
        });
        EventId(seq)
    }

    pub fn schedule_after(&mut self, delay_us: u64, owner: Option<NodeId>, event: E) -> EventId {
        self.schedule_at(self.now.plus(delay_us), owner, event)
    }

    pub fn cancel(&mut self, id: EventId) {
        self.cancelled.insert(id.0);
    }

    /// Cancel every pending event owned by `node`. O(pending); fine at the
    /// scales this simulator runs at, and only paid on crash faults.
    pub fn cancel_owned_by(&mut self, node: NodeId) -> usize {
        let mut n = 0;
        for e in self.heap.iter() {
            if e.owner == Some(node) && self.cancelled.insert(e.seq) {
                n += 1;
            }
        }
        n
    }

    /// Pop the next non-cancelled event due at or before `until`, advancing
    /// `now` to its trigger time. Returns None once nothing is due.
    pub fn pop_due(&mut self, until: SimTime) -> Option<Fired<E>> {
        while let Some(top) = self.heap.peek() {
            if top.at > until {
                return None;
            }
            let e = self.heap.pop().unwrap();
            debug_assert!(e.at >= self.now);
            if self.cancelled.remove(&e.seq) {
                continue;
            }
            self.now = e.at;
            return Some(Fired {
                at: e.at,
                owner: e.owner,
                event: e.event,
            });
        }
        None
    }

    /// Advance `now` without firing anything; used to finish a quiet window
    /// so that consecutive `run_until` calls compose.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(s: &mut Scheduler<&'static str>, until: SimTime) -> Vec<(u64, &'static str)> {
        let mut out = Vec::new();
        while let Some(f) = s.pop_due(until) {
            out.push((f.at.micros(), f.event));
        }
        s.advance_to(until);
        out
    }

    #[test]
    fn same_time_fires_in_schedule_order() {
        let mut s = Scheduler::new();
        s.schedule_at(SimTime(0), None, "e1");
        s.schedule_at(SimTime(0), None, "e2");
        assert_eq!(
            drain(&mut s, SimTime(0)),
            vec![(0, "e1"), (0, "e2")],
            "zero-delay events fire in scheduling order"
        );
    }

    #[test]
    fn ordering_is_by_time_then_seq() {
        let mut s = Scheduler::new();
        s.schedule_at(SimTime(30), None, "c");
        s.schedule_at(SimTime(10), None, "a");
        s.schedule_at(SimTime(10), None, "b");
        assert_eq!(
            drain(&mut s, SimTime(100)),
            vec![(10, "a"), (10, "b"), (30, "c")]
        );
        assert_eq!(s.now(), SimTime(100));
    }

    #[test]
    fn cancel_suppresses_delivery() {
        let mut s = Scheduler::new();
        let id = s.schedule_at(SimTime(5), None, "dead");
        s.schedule_at(SimTime(6), None, "alive");
        s.cancel(id);
        assert_eq!(drain(&mut s, SimTime(10)), vec![(6, "alive")]);
    }

    #[test]
    fn cancel_owned_by_node() {
        let mut s = Scheduler::new();
        s.schedule_at(SimTime(1), Some(NodeId(3)), "n3a");
        s.schedule_at(SimTime(2), Some(NodeId(4)), "n4");
        s.schedule_at(SimTime(3), Some(NodeId(3)), "n3b");
        assert_eq!(s.cancel_owned_by(NodeId(3)), 2);
        assert_eq!(drain(&mut s, SimTime(10)), vec![(2, "n4")]);
    }

    #[test]
    fn run_until_composes() {
        // run_until(t) followed by run_until(t') sees the same sequence as a
        // single run_until(t').
        let build = || {
            let mut s = Scheduler::new();
            for i in 0..10u64 {
                s.schedule_at(SimTime(i * 7 % 5), None, "x");
            }
            s
        };
        let mut a = build();
        let mut out_a = drain(&mut a, SimTime(2));
        out_a.extend(drain(&mut a, SimTime(10)));
        let mut b = build();
        let out_b = drain(&mut b, SimTime(10));
        assert_eq!(out_a, out_b);
    }
}
