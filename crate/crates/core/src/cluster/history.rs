//! The structured run history.
//!
//! Every externally meaningful moment of a run is appended here with the
//! simulation time at which it truly happened: transaction begins (with the
//! snapshot and when it was acquired), commit visibility (client ack), every
//! read with what it observed and where, consistency-point publications, and
//! authority mode changes. Checkers consume only this history, so a run can
//! be re-verified offline from its JSONL export.

use crate::error::SimError;
use crate::timestamp::Mode;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    /// Lost a write-write race or failed snapshot validation.
    WriteConflict,
    /// Counter-mode transaction outlived the switch to clock mode.
    StaleCounterMode,
    /// A node involved in the transaction crashed or was unreachable.
    NodeUnavailable,
    /// Gave up waiting for a response.
    Timeout,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadRoute {
    /// Served by the shard primary at the transaction snapshot.
    Primary,
    /// Single-shard read-only fast path: served at the primary's own latest
    /// committed timestamp, no snapshot wait.
    PrimaryBypass,
    /// Served by a replica at the published consistency point.
    Replica,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum HistoryEvent {
    /// A transaction finished beginning: its snapshot is fixed and the
    /// invocation wait (if any) has elapsed.
    Invoke {
        txn: u64,
        cn: u32,
        /// When the begin completed (post-wait); reads may start now.
        t: u64,
        snapshot: u64,
        snapshot_mode: Mode,
        /// When the snapshot timestamp was actually acquired.
        acq_at: u64,
        read_only: bool,
        /// The snapshot is the published replica consistency point rather
        /// than a fresh authority grant; such transactions trade freshness
        /// for replica-served reads and are exempt from the visibility
        /// check (bounded-staleness and session checks still apply).
        rcp_snapshot: bool,
    },
    /// A transaction's commit became visible to its client.
    CommitVisible {
        txn: u64,
        cn: u32,
        /// When the client acknowledgement was sent (visibility point).
        t: u64,
        ts: u64,
        ts_mode: Mode,
        /// When the commit timestamp was acquired.
        acq_at: u64,
        writes: Vec<String>,
    },
    Abort {
        txn: u64,
        cn: u32,
        t: u64,
        reason: AbortReason,
    },
    /// One read answered, with full provenance.
    ReadReturn {
        txn: u64,
        t: u64,
        key: String,
        /// Node that served the read.
        node: u32,
        route: ReadRoute,
        /// Snapshot the read was evaluated at.
        snapshot: u64,
        observed_writer: Option<u64>,
        observed_ts: Option<u64>,
        observed_data: Option<u64>,
        /// When the serving node evaluated the read.
        served_at: u64,
        /// Time spent parked behind unresolved locks or snapshot waits.
        blocked_us: u64,
        /// For replica-served reads, the serving node's oracle-true
        /// replication lag at serve time.
        true_staleness_us: Option<u64>,
    },
    RcpPublish {
        t: u64,
        value: u64,
        epoch: u64,
        collector: u32,
        stale_members: Vec<u32>,
    },
    ModeChange {
        t: u64,
        node: u32,
        mode: Mode,
    },
    TransitionStart {
        t: u64,
        direction: String,
    },
    TransitionDone {
        t: u64,
        direction: String,
    },
}

impl HistoryEvent {
    pub fn at(&self) -> u64 {
        match self {
            HistoryEvent::Invoke { t, .. }
            | HistoryEvent::CommitVisible { t, .. }
            | HistoryEvent::Abort { t, .. }
            | HistoryEvent::ReadReturn { t, .. }
            | HistoryEvent::RcpPublish { t, .. }
            | HistoryEvent::ModeChange { t, .. }
            | HistoryEvent::TransitionStart { t, .. }
            | HistoryEvent::TransitionDone { t, .. } => *t,
        }
    }
}

#[derive(Debug, Default)]
pub struct History {
    pub events: Vec<HistoryEvent>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ev: HistoryEvent) {
        self.events.push(ev);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("history events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self, SimError> {
        let mut events = Vec::new();
        for (i, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line).map_err(|e| SimError::HistoryDecode {
                line: i + 1,
                msg: e.to_string(),
            })?;
            events.push(ev);
        }
        Ok(History { events })
    }

    pub fn commits(&self) -> impl Iterator<Item = &HistoryEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, HistoryEvent::CommitVisible { .. }))
    }

    pub fn reads(&self) -> impl Iterator<Item = &HistoryEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, HistoryEvent::ReadReturn { .. }))
    }
}
