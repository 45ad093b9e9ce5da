//! The centralized timestamp server and the mode-transition control plane.
//!
//! In counter mode every timestamp is a roundtrip to this server, which hands
//! out consecutive integers. In clock mode nodes issue timestamps from their
//! own bounded-error clocks and the server sits idle. Dual mode bridges the
//! two during a live switch: the server answers max(counter, caller's clock
//! value) + 1, so a dual grant dominates everything either authority has
//! issued so far.
//!
//! Counter-mode transactions that reach their commit point while the server
//! is in dual mode are the dangerous case: their grant may leap ahead of
//! clocks that other nodes are already trusting, so the grant carries a
//! mandatory wait of twice the largest clock error bound the server has seen
//! this transition. Without that wait a freshly switched node can begin a
//! transaction with a smaller timestamp and miss the committed write; the
//! scripted anomaly scenario reproduces this exactly.

use crate::cluster::topology::NodeId;
use crate::error::SimError;
use crate::sim::time::SimTime;
use crate::timestamp::{Mode, Timestamp};
use std::collections::BTreeSet;

/// Direction of a live authority switch.
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    CounterToClock,
    ClockToCounter,
}

impl Direction {
    pub fn from_mode(&self) -> Mode {
        match self {
            Direction::CounterToClock => Mode::Counter,
            Direction::ClockToCounter => Mode::Clock,
        }
    }

    pub fn to_mode(&self) -> Mode {
        match self {
            Direction::CounterToClock => Mode::Clock,
            Direction::ClockToCounter => Mode::Counter,
        }
    }

    /// Stable name used in configs, histories, and reports.
    pub fn label(&self) -> &'static str {
        match self {
            Direction::CounterToClock => "counter_to_clock",
            Direction::ClockToCounter => "clock_to_counter",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Waiting for every CN to acknowledge the switch into dual mode.
    AwaitDualAcks,
    /// Counter-to-clock only: residence timer after the last ack, so that
    /// fresh clock readings provably exceed every issued value.
    DualResidence,
    /// Waiting for every CN to acknowledge the final mode.
    AwaitModeAcks,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub direction: Direction,
    pub phase: Phase,
    pub pending: BTreeSet<NodeId>,
    pub started_at: SimTime,
    pub acks_done_at: Option<SimTime>,
}

/// What a timestamp request came in as.
#[derive(Copy, Clone, Debug)]
pub struct TsRequest {
    /// Mode the requesting transaction was begun under.
    pub txn_mode: Mode,
    /// Caller's fresh clock reading (value, err); required so dual grants can
    /// dominate the clock side and the server can track the worst error bound.
    pub clock: Option<(u64, u64)>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TsReply {
    Granted {
        ts: Timestamp,
        /// Absolute wait the coordinator must observe before making the
        /// commit visible. Nonzero only for counter-mode transactions granted
        /// while the server is in dual mode.
        hold_us: u64,
    },
    /// Counter-mode transaction reached the server after the cluster moved to
    /// clock mode; it can no longer be ordered and must abort.
    StaleCounterMode,
}

/// Outcome of feeding an acknowledgement into the transition state machine.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AckOutcome {
    /// Still waiting on more acks.
    Pending,
    /// All CNs are in dual mode; counter-to-clock now holds residence for
    /// `wait_us` (twice the worst observed error bound) before switching.
    StartResidence { wait_us: u64 },
    /// All CNs are in dual mode; clock-to-counter switches immediately.
    /// The server has already seeded its counter above every clock value
    /// reported or observed, so nothing in flight needs to abort.
    SwitchServer { to: Mode },
    /// Final mode acknowledged by everyone; transition complete.
    Completed,
}

pub struct TsServer {
    issuer: u32,
    mode: Mode,
    counter: u64,
    seq: u64,
    max_err_observed: u64,
    max_clock_seen: u64,
    transition: Option<Transition>,
    /// The dual-mode safeguards: the visibility hold on counter grants and
    /// the switch guard that keeps the server in dual until its clock lower
    /// bound passes every issued value. Disabling both reproduces the
    /// ordering anomaly; the flag exists for exactly that experiment.
    pub enable_dual_hold: bool,
}

impl TsServer {
    pub fn new(issuer: u32, initial_mode: Mode) -> Self {
        assert!(initial_mode != Mode::Dual, "dual is a transition state");
        TsServer {
            issuer,
            mode: initial_mode,
            counter: 0,
            seq: 0,
            max_err_observed: 0,
            max_clock_seen: 0,
            transition: None,
            enable_dual_hold: true,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn max_err_observed(&self) -> u64 {
        self.max_err_observed
    }

    pub fn transition(&self) -> Option<&Transition> {
        self.transition.as_ref()
    }

    fn stamp(&mut self, value: u64, mode: Mode) -> Timestamp {
        self.seq += 1;
        Timestamp::new(value, 0, mode, self.issuer, self.seq)
    }

    fn observe_clock(&mut self, value: u64, err: u64) {
        self.max_clock_seen = self.max_clock_seen.max(value);
        self.max_err_observed = self.max_err_observed.max(err);
    }

    /// Counter grant: consecutive integers, raised above every observed clock
    /// value while the server is in dual mode.
    fn next_counter(&mut self) -> Timestamp {
        if self.mode == Mode::Dual {
            self.counter = self.counter.max(self.max_clock_seen);
        }
        self.counter += 1;
        let v = self.counter;
        self.stamp(v, Mode::Counter)
    }

    /// Dual grant: max(counter, caller's clock value) + 1.
    fn next_dual(&mut self, clock_value: u64, clock_err: u64) -> Timestamp {
        self.observe_clock(clock_value, clock_err);
        self.counter = self.counter.max(clock_value) + 1;
        let v = self.counter;
        self.stamp(v, Mode::Dual)
    }

    /// Serve one timestamp request (invocation and commit follow the same
    /// granting rules; the difference is what the coordinator does with it).
    pub fn grant(&mut self, req: TsRequest) -> TsReply {
        match (req.txn_mode, self.mode) {
            (Mode::Counter, Mode::Counter) => TsReply::Granted {
                ts: self.next_counter(),
                hold_us: 0,
            },
            (Mode::Counter, Mode::Dual) => {
                let hold = if self.enable_dual_hold {
                    2 * self.max_err_observed
                } else {
                    0
                };
                TsReply::Granted {
                    ts: self.next_counter(),
                    hold_us: hold,
                }
            }
            (Mode::Counter, Mode::Clock) => TsReply::StaleCounterMode,
            // Clock- or dual-begun transactions that still reach the server
            // (mid-transition stragglers) get a dual grant, which dominates
            // their snapshot and everything issued so far.
            (_, _) => {
                let (v, e) = req.clock.unwrap_or((0, 0));
                TsReply::Granted {
                    ts: self.next_dual(v, e),
                    hold_us: 0,
                }
            }
        }
    }

    /// Begin a live mode switch. The server enters dual mode at once and
    /// waits for every CN to follow.
    pub fn start_transition(
        &mut self,
        direction: Direction,
        cns: impl IntoIterator<Item = NodeId>,
        now: SimTime,
    ) -> Result<(), SimError> {
        if self.transition.is_some() {
            return Err(SimError::TransitionInProgress);
        }
        if self.mode != direction.from_mode() {
            return Err(SimError::TransitionMode(format!(
                "server is in {} mode, cannot run {:?}",
                self.mode, direction
            )));
        }
        self.mode = Mode::Dual;
        self.max_err_observed = 0;
        self.transition = Some(Transition {
            direction,
            phase: Phase::AwaitDualAcks,
            pending: cns.into_iter().collect(),
            started_at: now,
            acks_done_at: None,
        });
        Ok(())
    }

    /// A CN confirmed it is in dual mode, reporting the largest clock value
    /// it ever issued plus a fresh reading, so the counter can be seeded
    /// above everything the clock side produced.
    pub fn on_dual_ack(
        &mut self,
        cn: NodeId,
        max_issued_clock: u64,
        reading: (u64, u64),
        now: SimTime,
    ) -> AckOutcome {
        self.observe_clock(max_issued_clock, 0);
        self.observe_clock(reading.0, reading.1);
        let t = match self.transition.as_mut() {
            Some(t) if t.phase == Phase::AwaitDualAcks => t,
            _ => return AckOutcome::Pending,
        };
        t.pending.remove(&cn);
        if !t.pending.is_empty() {
            return AckOutcome::Pending;
        }
        t.acks_done_at = Some(now);
        match t.direction {
            Direction::CounterToClock => {
                t.phase = Phase::DualResidence;
                AckOutcome::StartResidence {
                    wait_us: 2 * self.max_err_observed,
                }
            }
            Direction::ClockToCounter => {
                // Seed so the next counter grant exceeds every clock value
                // issued up to the switch; no residence needed and nothing
                // already running has to abort.
                self.counter = self.counter.max(self.max_clock_seen);
                self.mode = Mode::Counter;
                t.phase = Phase::AwaitModeAcks;
                AckOutcome::SwitchServer { to: Mode::Counter }
            }
        }
    }

    /// Counter-to-clock residence timer fired. `clock_lower_bound` is the
    /// server's own current clock lower bound; the switch additionally waits
    /// until it exceeds every issued value, so any clock timestamp issued
    /// from now on is provably larger. Returns the final mode when the switch
    /// happens, or None if the caller must re-arm the timer.
    pub fn on_residence_elapsed(&mut self, clock_lower_bound: u64) -> Option<Mode> {
        let t = self.transition.as_mut()?;
        if t.phase != Phase::DualResidence {
            return None;
        }
        // The switch guard: stay in dual until the server's own clock lower
        // bound has passed every counter value it issued, so clock grants and
        // snapshots taken after the switch always exceed them. Disabled
        // together with the grant hold when running the anomaly experiment.
        if self.enable_dual_hold && clock_lower_bound <= self.counter {
            return None;
        }
        self.mode = Mode::Clock;
        t.phase = Phase::AwaitModeAcks;
        Some(Mode::Clock)
    }

    /// A CN confirmed the final mode.
    pub fn on_mode_ack(&mut self, cn: NodeId, cns_total: usize, acked: &mut BTreeSet<NodeId>) -> AckOutcome {
        acked.insert(cn);
        if acked.len() >= cns_total {
            self.transition = None;
            acked.clear();
            AckOutcome::Completed
        } else {
            AckOutcome::Pending
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server(mode: Mode) -> TsServer {
        TsServer::new(0, mode)
    }

    fn value_of(r: TsReply) -> u64 {
        match r {
            TsReply::Granted { ts, .. } => ts.value,
            other => panic!("expected grant, got {other:?}"),
        }
    }

    #[test]
    fn counter_starts_at_zero_and_increments() {
        let mut s = server(Mode::Counter);
        let req = TsRequest {
            txn_mode: Mode::Counter,
            clock: None,
        };
        assert_eq!(value_of(s.grant(req)), 1, "first grant after 0 is 1");
        assert_eq!(value_of(s.grant(req)), 2);
        assert_eq!(value_of(s.grant(req)), 3);
    }

    #[test]
    fn dual_grant_is_max_plus_one() {
        let mut s = server(Mode::Counter);
        s.counter = 100;
        s.mode = Mode::Dual;
        let g = s.grant(TsRequest {
            txn_mode: Mode::Dual,
            clock: Some((50, 10)),
        });
        assert_eq!(value_of(g), 101, "counter dominates a small clock value");
        let g = s.grant(TsRequest {
            txn_mode: Mode::Dual,
            clock: Some((1_000_000_000, 61)),
        });
        assert_eq!(value_of(g), 1_000_000_001, "large clock value dominates");
        assert_eq!(s.counter(), 1_000_000_001);
    }

    #[test]
    fn counter_grant_in_dual_mode_raises_above_observed_clocks() {
        let mut s = server(Mode::Counter);
        s.counter = 42;
        s.mode = Mode::Dual;
        s.observe_clock(1_000_000_000, 61);
        let r = s.grant(TsRequest {
            txn_mode: Mode::Counter,
            clock: None,
        });
        match r {
            TsReply::Granted { ts, hold_us } => {
                assert!(ts.value >= 1_000_000_001);
                assert_eq!(hold_us, 122, "hold is twice the worst error bound");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn max_err_observed_is_a_running_max() {
        let mut s = server(Mode::Counter);
        s.mode = Mode::Dual;
        s.observe_clock(10, 61);
        s.observe_clock(20, 40);
        assert_eq!(s.max_err_observed(), 61);
    }

    #[test]
    fn disabled_hold_grants_without_waiting() {
        let mut s = server(Mode::Counter);
        s.mode = Mode::Dual;
        s.enable_dual_hold = false;
        s.observe_clock(99, 61);
        match s.grant(TsRequest {
            txn_mode: Mode::Counter,
            clock: None,
        }) {
            TsReply::Granted { hold_us, .. } => assert_eq!(hold_us, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn disabled_hold_also_bypasses_the_switch_guard() {
        let mut s = server(Mode::Counter);
        s.enable_dual_hold = false;
        s.start_transition(Direction::CounterToClock, [NodeId(4)], SimTime::ZERO)
            .unwrap();
        s.on_dual_ack(NodeId(4), 0, (1_000, 61), SimTime(50));
        // A counter grant during dual raises the counter to clock scale.
        match s.grant(TsRequest {
            txn_mode: Mode::Counter,
            clock: None,
        }) {
            TsReply::Granted { ts, .. } => assert!(ts.value > 1_000),
            other => panic!("{other:?}"),
        }
        // With the safeguards off, a lower bound far below the issued value
        // is accepted and the switch proceeds anyway.
        assert_eq!(s.on_residence_elapsed(3), Some(Mode::Clock));
    }

    #[test]
    fn stale_counter_transactions_abort_after_switch() {
        let mut s = server(Mode::Clock);
        let r = s.grant(TsRequest {
            txn_mode: Mode::Counter,
            clock: None,
        });
        assert_eq!(r, TsReply::StaleCounterMode);
    }

    #[test]
    fn grants_are_strictly_increasing_across_mode_churn() {
        let mut s = server(Mode::Counter);
        let mut last = 0;
        let check = |r: TsReply, last: &mut u64| {
            if let TsReply::Granted { ts, .. } = r {
                assert!(ts.value > *last, "{} !> {last}", ts.value);
                *last = ts.value;
            }
        };
        for i in 0..100u64 {
            check(
                s.grant(TsRequest {
                    txn_mode: Mode::Counter,
                    clock: None,
                }),
                &mut last,
            );
            if i == 30 {
                s.mode = Mode::Dual;
            }
            if i > 30 {
                check(
                    s.grant(TsRequest {
                        txn_mode: Mode::Dual,
                        clock: Some((i * 1_000, 61)),
                    }),
                    &mut last,
                );
            }
        }
    }

    #[test]
    fn counter_to_clock_choreography() {
        let mut s = server(Mode::Counter);
        let cns = [NodeId(4), NodeId(5), NodeId(6)];
        s.start_transition(Direction::CounterToClock, cns, SimTime(0))
            .unwrap();
        assert_eq!(s.mode(), Mode::Dual);
        assert!(s
            .start_transition(Direction::CounterToClock, cns, SimTime(1))
            .is_err());

        assert_eq!(
            s.on_dual_ack(NodeId(4), 0, (5_000, 61), SimTime(10)),
            AckOutcome::Pending
        );
        assert_eq!(
            s.on_dual_ack(NodeId(5), 0, (5_100, 60), SimTime(11)),
            AckOutcome::Pending
        );
        match s.on_dual_ack(NodeId(6), 0, (5_200, 61), SimTime(12)) {
            AckOutcome::StartResidence { wait_us } => assert_eq!(wait_us, 122),
            other => panic!("{other:?}"),
        }
        // Residence cannot end until fresh clock readings dominate the counter.
        assert_eq!(s.on_residence_elapsed(s.counter()), None);
        assert_eq!(s.on_residence_elapsed(s.counter() + 1), Some(Mode::Clock));
        assert_eq!(s.mode(), Mode::Clock);

        let mut acked = BTreeSet::new();
        assert_eq!(
            s.on_mode_ack(NodeId(4), 3, &mut acked),
            AckOutcome::Pending
        );
        s.on_mode_ack(NodeId(5), 3, &mut acked);
        assert_eq!(
            s.on_mode_ack(NodeId(6), 3, &mut acked),
            AckOutcome::Completed
        );
        assert!(s.transition().is_none());
    }

    #[test]
    fn clock_to_counter_seeds_counter_and_switches_without_residence() {
        let mut s = server(Mode::Clock);
        let cns = [NodeId(4), NodeId(5)];
        s.start_transition(Direction::ClockToCounter, cns, SimTime(0))
            .unwrap();
        assert_eq!(s.mode(), Mode::Dual);
        s.on_dual_ack(NodeId(4), 1_000_000_000, (1_000_000_050, 61), SimTime(5));
        match s.on_dual_ack(NodeId(5), 999_999_000, (1_000_000_060, 61), SimTime(6)) {
            AckOutcome::SwitchServer { to } => assert_eq!(to, Mode::Counter),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.mode(), Mode::Counter);
        // First counter grant exceeds the largest clock value ever issued.
        let v = value_of(s.grant(TsRequest {
            txn_mode: Mode::Counter,
            clock: None,
        }));
        assert!(v >= 1_000_000_061, "seeded counter: {v}");
    }

    #[test]
    fn wrong_direction_is_rejected() {
        let mut s = server(Mode::Counter);
        let e = s.start_transition(Direction::ClockToCounter, [NodeId(1)], SimTime(0));
        assert!(e.is_err());
        assert_eq!(s.mode(), Mode::Counter, "mode unchanged after rejection");
    }
}
