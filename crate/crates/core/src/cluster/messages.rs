//! Everything that travels between nodes or wakes one up.
//!
//! `Event` is the engine's payload: either a message delivery or a local
//! timer. Message sizes feed the bandwidth model, so bulk payloads (redo
//! shipping) estimate their encoded size rather than a flat constant.

use crate::authority::Direction;
use crate::cluster::topology::{NodeId, ShardId};
use crate::replication::RedoRecord;
use crate::store::{Key, ReadHit};
use crate::timestamp::Mode;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TsPurpose {
    Invoke,
    Commit,
}

#[derive(Clone, Debug)]
pub enum Msg {
    // Timestamp plane.
    TsReq {
        txn: u64,
        purpose: TsPurpose,
        txn_mode: Mode,
        /// Caller's fresh clock reading (value, err), when it has one.
        clock: Option<(u64, u64)>,
    },
    TsResp {
        txn: u64,
        purpose: TsPurpose,
        granted: Option<(u64, Mode, u64)>, // (value, mode, hold_us); None = stale counter
        granted_at: u64,
    },
    /// A data node asks the authority for its current counter value (not an
    /// issue), to stamp a heartbeat in counter or dual mode.
    CounterFetch {
        shard: ShardId,
    },
    CounterVal {
        shard: ShardId,
        value: u64,
        granted_at: u64,
    },

    // Transition control plane.
    CtlSwitch {
        mode: Mode,
        direction: Direction,
    },
    CtlDualAck {
        max_issued_clock: u64,
        reading: (u64, u64),
    },
    CtlModeAck,

    // Data plane: CN to shard primary or replica.
    ReadReq {
        txn: u64,
        key: Key,
        snapshot: u64,
        /// Single-shard read-only fast path: serve at the primary's latest
        /// committed timestamp instead of the given snapshot.
        bypass: bool,
        /// True when addressed to a replica (serve from applied state, never
        /// validate).
        replica: bool,
        /// Snapshot was self-issued from a clock: the primary must wait until
        /// its own clock lower bound passes it before serving, or an
        /// unlocked key could still receive a commit below the snapshot.
        clock_snapshot: bool,
    },
    ReadResp {
        txn: u64,
        key: Key,
        hit: Option<ReadHit>,
        /// Snapshot the read was actually evaluated at (differs from the
        /// request under bypass).
        snapshot: u64,
        served_at: u64,
        blocked_us: u64,
        replica: bool,
        bypass: bool,
        /// Oracle-true replication lag of the serving node at serve time:
        /// how long ago its applied prefix matched the primary log. Filled
        /// for replica-served reads, for staleness audits.
        true_staleness_us: Option<u64>,
    },
    PendReq {
        txn: u64,
        writes: Vec<(Key, u64)>,
    },
    PendResp {
        txn: u64,
        ok: bool,
    },
    FinalizeReq {
        txn: u64,
        snapshot: u64,
        commit_ts: u64,
    },
    FinalizeResp {
        txn: u64,
        ok: bool,
    },
    PrepareReq {
        txn: u64,
        snapshot: u64,
        writes: Vec<(Key, u64)>,
        ddl_table: Option<u32>,
    },
    PrepareResp {
        txn: u64,
        shard: ShardId,
        vote_yes: bool,
    },
    DecisionReq {
        txn: u64,
        commit: bool,
        commit_ts: u64,
        ddl_table: Option<u32>,
    },
    DecisionResp {
        txn: u64,
        shard: ShardId,
    },
    /// Participant recovering a prepared transaction asks the coordinator.
    ResolveTxnReq {
        txn: u64,
        shard: ShardId,
    },
    ResolveTxnResp {
        txn: u64,
        /// Commit timestamp, or None for abort.
        commit: Option<u64>,
    },

    // Replication plane.
    RedoShip {
        shard: ShardId,
        records: Vec<RedoRecord>,
    },
    RedoAck {
        shard: ShardId,
        applied_lsn: u64,
    },
    ResumeReq {
        shard: ShardId,
        applied_lsn: u64,
    },

    // Consistency-point plane.
    RcpReport {
        shard: ShardId,
        freshness_ts: u64,
        applied_lsn: u64,
    },
    RcpPublishMsg {
        value: u64,
        epoch: u64,
        collector: NodeId,
    },
    FloorQuery {
        epoch: u64,
    },
    FloorResp {
        floor: u64,
    },

    // Schema catalog broadcast.
    DdlCommit {
        table: u32,
        commit_ts: u64,
    },
}

impl Msg {
    /// Approximate wire size, used by the bandwidth model.
    pub fn size_bytes(&self) -> u64 {
        let base = 48u64;
        match self {
            Msg::ReadReq { key, .. } => base + key.len() as u64,
            Msg::ReadResp { key, .. } => base + key.len() as u64 + 24,
            Msg::PendReq { writes, .. } | Msg::PrepareReq { writes, .. } => {
                base + writes.iter().map(|(k, _)| k.len() as u64 + 12).sum::<u64>()
            }
            Msg::RedoShip { records, .. } => {
                base + records.iter().map(|r| r.encoded_len() as u64).sum::<u64>()
            }
            _ => base,
        }
    }
}

/// Local wakeups. Timers owned by a node die with it; cluster-level timers
/// (faults, arrivals, scripts) belong to no node and always fire.
#[derive(Clone, Debug)]
pub enum Timer {
    /// Periodic per-node clock resynchronization.
    ClockSync { node: NodeId },
    /// Data node appends a freshness heartbeat for its shard.
    Heartbeat { shard: ShardId },
    /// Replica reports freshness to the collector.
    Report { shard: ShardId, replica: NodeId },
    /// Collector publishes the consistency point.
    RcpTick,
    /// CNs watch for missed publications and take over collection.
    RcpWatchdog { cn: NodeId },
    /// Re-check a transaction's wait condition against the clock.
    WaitCheck { txn: u64 },
    /// Authority residence timer during a counter-to-clock switch.
    Residence,
    /// Scheduled mode transition kickoff.
    TransitionAt { idx: usize },
    /// Scheduled fault injection.
    FaultAt { idx: usize },
    /// A client begins (or retries) a transaction.
    Arrival { client: u32 },
    /// Scripted scenario step.
    Script { step: usize },
    /// Periodic schema-change transaction.
    DdlKick,
    /// Apply a lagged redo batch at a replica.
    LaggedApply { shard: ShardId, replica: NodeId },
    /// Primary housekeeping: retry parked reads whose clock wait may have
    /// elapsed and re-ask coordinators about unresolved prepared locks.
    DnTick { shard: ShardId },
    /// Transaction gave up waiting for a response.
    TxnTimeout { txn: u64 },
}

#[derive(Clone, Debug)]
pub enum Event {
    Deliver { src: NodeId, dst: NodeId, msg: Msg },
    Timer(Timer),
}
