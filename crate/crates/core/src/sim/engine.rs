use super::net::NetworkModel;
use super::sched::{EventId, Fired, Scheduler};
use super::time::SimTime;
use crate::cluster::topology::NodeId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Debug;

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct EngineStats {
    pub events_fired: u64,
    pub messages_sent: u64,
    pub dropped_dead_owner: u64,
    pub cancelled_on_crash: u64,
}

/// The deterministic heart of the simulator: one event queue, one network
/// model, one seeded RNG. Everything observable about a run is a function of
/// the initial configuration and the seed.
///
/// The engine knows nothing about protocol state; the cluster layer holds
/// that and drives `pop_due` in a loop, handling each event with `&mut` access
/// to both itself and the engine.
pub struct Engine<E> {
    sched: Scheduler<E>,
    pub net: NetworkModel,
    pub rng: ChaCha8Rng,
    alive: Vec<bool>,
    pub stats: EngineStats,
    trace: Option<Vec<String>>,
}

impl<E: Debug> Engine<E> {
    pub fn new(net: NetworkModel, node_count: usize, seed: u64) -> Self {
        Engine {
            sched: Scheduler::new(),
            net,
            rng: ChaCha8Rng::seed_from_u64(seed),
            alive: vec![true; node_count],
            stats: EngineStats::default(),
            trace: None,
        }
    }

    /// Record a line per fired event. Off by default; determinism tests
    /// compare the collected traces byte for byte.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.take().unwrap_or_default()
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.alive[node.0 as usize]
    }

    pub fn schedule_at(&mut self, at: SimTime, owner: Option<NodeId>, ev: E) -> EventId {
        self.sched.schedule_at(at, owner, ev)
    }

    pub fn schedule_after(&mut self, delay_us: u64, owner: Option<NodeId>, ev: E) -> EventId {
        self.sched.schedule_after(delay_us, owner, ev)
    }

    pub fn cancel(&mut self, id: EventId) {
        self.sched.cancel(id)
    }

    /// Send a message: computes the delivery instant from the latency matrix
    /// (plus jitter and bandwidth) and schedules `ev` owned by `dst`, so it is
    /// dropped if the destination is down when it would arrive. Messages from
    /// a dead source are discarded: a crashed node sends nothing.
    pub fn send(&mut self, src: NodeId, dst: NodeId, size_bytes: u64, ev: E) {
        if !self.is_alive(src) {
            return;
        }
        self.stats.messages_sent += 1;
        let at = self
            .net
            .delivery_time(self.sched.now(), src, dst, size_bytes, &mut self.rng);
        self.sched.schedule_at(at, Some(dst), ev);
    }

    /// Crash semantics: cancel the node's pending events (timers and
    /// continuations die with it) and drop in-flight messages addressed to it.
    pub fn apply_crash(&mut self, node: NodeId) {
        self.alive[node.0 as usize] = false;
        self.stats.cancelled_on_crash += self.sched.cancel_owned_by(node) as u64;
    }

    pub fn apply_recover(&mut self, node: NodeId) {
        self.alive[node.0 as usize] = true;
    }

    /// Pop the next due event at or before `until`. Events owned by a node
    /// that died after scheduling are dropped here (messages to crashed
    /// destinations, stray timers).
    pub fn pop_due(&mut self, until: SimTime) -> Option<Fired<E>> {
        loop {
            let fired = self.sched.pop_due(until)?;
            if let Some(owner) = fired.owner {
                if !self.is_alive(owner) {
                    self.stats.dropped_dead_owner += 1;
                    continue;
                }
            }
            self.stats.events_fired += 1;
            if let Some(t) = self.trace.as_mut() {
                t.push(format!("{} {:?}", fired.at.micros(), fired.event));
            }
            return Some(fired);
        }
    }

    /// Advance the clock over a quiet stretch so consecutive windows compose.
    pub fn finish_window(&mut self, until: SimTime) {
        self.sched.advance_to(until);
    }

    pub fn pending_events(&self) -> usize {
        self.sched.pending()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::net::LatencyMatrix;

    #[derive(Debug, PartialEq)]
    enum Ev {
        Tick(u32),
        Msg(&'static str),
    }

    fn engine() -> Engine<Ev> {
        let net = NetworkModel::new(LatencyMatrix::uniform(1, 1_000), vec![0, 0, 0]);
        Engine::new(net, 3, 42)
    }

    fn drain(e: &mut Engine<Ev>, until: SimTime) -> Vec<(u64, Ev)> {
        let mut out = Vec::new();
        while let Some(f) = e.pop_due(until) {
            out.push((f.at.micros(), f.event));
        }
        e.finish_window(until);
        out
    }

    #[test]
    fn send_delivers_after_matrix_delay() {
        let mut e = engine();
        e.send(NodeId(0), NodeId(1), 10, Ev::Msg("hello"));
        let out = drain(&mut e, SimTime(10_000));
        assert_eq!(out, vec![(1_000, Ev::Msg("hello"))]);
    }

    #[test]
    fn message_to_crashed_destination_is_dropped() {
        let mut e = engine();
        e.send(NodeId(0), NodeId(1), 10, Ev::Msg("lost"));
        e.apply_crash(NodeId(1));
        assert!(drain(&mut e, SimTime(10_000)).is_empty());
        assert_eq!(e.stats.cancelled_on_crash, 1);
    }

    #[test]
    fn delivery_depends_on_liveness_at_arrival() {
        // Sent during the outage but the node is back up before the delivery
        // instant: the message arrives. Only messages in flight at crash time
        // or arriving into a dead node are lost.
        let mut e = engine();
        e.apply_crash(NodeId(1));
        e.send(NodeId(0), NodeId(1), 10, Ev::Msg("late"));
        e.apply_recover(NodeId(1));
        let out = drain(&mut e, SimTime(10_000));
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn crash_cancels_owned_timers() {
        let mut e = engine();
        e.schedule_at(SimTime(5), Some(NodeId(2)), Ev::Tick(1));
        e.schedule_at(SimTime(6), Some(NodeId(0)), Ev::Tick(2));
        e.apply_crash(NodeId(2));
        let out = drain(&mut e, SimTime(10));
        assert_eq!(out, vec![(6, Ev::Tick(2))]);
    }

    #[test]
    fn dead_sender_sends_nothing() {
        let mut e = engine();
        e.apply_crash(NodeId(0));
        e.send(NodeId(0), NodeId(1), 10, Ev::Msg("never"));
        assert_eq!(e.stats.messages_sent, 0);
        assert!(drain(&mut e, SimTime(10_000)).is_empty());
    }
}
