use super::time::SimTime;
use crate::cluster::topology::NodeId;

/// A fault injected at a fixed instant. Targets are resolved node ids; the
/// config layer maps human-readable names ("cn0", "rep2.1") onto them.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultSpec {
    pub at: SimTime,
    pub kind: FaultKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FaultKind {
    /// Node halts: pending events it owns are cancelled, in-flight messages
    /// to it are dropped, volatile state is lost.
    NodeCrash { node: NodeId },
    /// Node restarts with empty volatile state and replays its durable log.
    NodeRecover { node: NodeId },
    /// Node's clock leaves its error envelope: a step offset and/or extra
    /// drift beyond the advertised bound. The clock is flagged unhealthy.
    ClockDesync {
        node: NodeId,
        offset_us: i64,
        extra_drift_ppm: i64,
    },
    /// Pin a directed link's one-way delay, overriding the latency matrix.
    LinkDelayOverride {
        src: NodeId,
        dst: NodeId,
        delay_us: u64,
    },
    /// Remove a previously pinned link delay.
    LinkDelayClear { src: NodeId, dst: NodeId },
}
