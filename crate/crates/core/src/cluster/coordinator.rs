//! The coordinator node (CN): runs transactions for attached clients,
//! issues or requests timestamps, routes reads, drives two-phase commits,
//! and (for one elected CN at a time) collects and publishes the replica
//! consistency point.
//!
//! Handlers never touch the engine directly; they emit `Out` actions that the
//! world applies. That keeps this file a pure state machine, testable without
//! a network.

use crate::clocks::ClockReading;
use crate::cluster::history::{AbortReason, HistoryEvent, ReadRoute};
use crate::cluster::messages::{Msg, TsPurpose};
use crate::cluster::topology::{NodeId, ShardId, Topology};
use crate::config::RouteCfg;
use crate::ror::{self, Candidate, Catalog, RcpCollector};
use crate::sim::time::SimTime;
use crate::store::{Key, ReadHit};
use crate::timestamp::Mode;
use crate::util;
use std::collections::{BTreeMap, BTreeSet};

/// Actions a CN handler asks the world to perform.
#[derive(Clone, Debug)]
pub enum Out {
    Send { dst: NodeId, msg: Msg },
    /// Wake the transaction when this CN's clock lower bound exceeds `value`.
    WaitValue { txn: u64, value: u64 },
    /// Wake the transaction after a fixed hold.
    WaitFor { txn: u64, us: u64 },
    /// Re-arm the transaction's timeout; it is past the point of no return
    /// and must be carried to completion, not aborted.
    RearmTimeout { txn: u64 },
    History(HistoryEvent),
    /// Transaction finished (client loop may continue).
    Done { txn: u64, committed: bool },
    /// This CN just became the consistency-point collector.
    StartPublishing,
}

#[derive(Clone, Debug)]
pub struct TxnPlan {
    pub client: u32,
    pub read_only: bool,
    pub ddl_table: Option<u32>,
    pub reads: Vec<Key>,
    pub writes: Vec<(Key, u64)>,
    /// The client's session floor: the highest commit timestamp the client
    /// has been acknowledged. Carried in the plan because the session lives
    /// with the client, which may move between CNs after a crash.
    pub floor: u64,
}

#[derive(Clone, Debug)]
pub struct CnCfg {
    pub route: RouteCfg,
    pub staleness_bound_us: Option<u64>,
    pub disable_commit_wait: bool,
    pub shard_count: u32,
    pub rcp_interval_us: u64,
    pub rcp_stale_after_us: u64,
    pub disable_rcp_clamp: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Phase {
    /// Clock mode: waiting for the lower bound to pass the snapshot.
    InvokeWait,
    /// Waiting for a snapshot grant from the authority.
    TsInvoke,
    Read,
    Pend,
    TsCommit,
    /// Counter-mode grant during dual: absolute hold before visibility.
    CommitHold,
    /// Clock lower bound must pass the commit timestamp.
    CommitWait,
    Finalize,
    Prepare,
    Decide,
}

struct Txn {
    id: u64,
    plan: TxnPlan,
    mode_at_begin: Mode,
    phase: Phase,
    snapshot: u64,
    snapshot_mode: Mode,
    snapshot_acq_at: u64,
    replica_route: bool,
    /// Send time of each in-flight read, for the latency estimator.
    reads_out: BTreeMap<Key, SimTime>,
    reads_seen: BTreeMap<Key, Option<ReadHit>>,
    /// Snapshot the reads were actually served at (bypass fills it in).
    effective_snapshot: u64,
    write_shards: BTreeSet<ShardId>,
    votes_pending: BTreeSet<ShardId>,
    decide_pending: BTreeSet<ShardId>,
    commit_ts: u64,
    commit_mode: Mode,
    commit_acq_at: u64,
}

pub struct CnState {
    pub node: NodeId,
    pub idx: u32,
    pub mode: Mode,
    cfg: CnCfg,
    /// Largest clock value this CN ever self-issued (snapshots and commit
    /// timestamps); reported when entering dual mode so the counter can be
    /// seeded above it.
    max_issued_clock: u64,
    txns: BTreeMap<u64, Txn>,
    /// Two-phase outcomes, consulted by recovering participants. None means
    /// aborted (and unknown transactions resolve to abort).
    outcome_log: BTreeMap<u64, Option<u64>>,
    pub catalog: Catalog,
    /// Last freshness report per replica, for skyline staleness estimates.
    replica_freshness: BTreeMap<NodeId, (ShardId, u64, SimTime)>,
    /// Running RTT estimate per data node, refined from every read response.
    latency_rtt_us: BTreeMap<NodeId, u64>,
    /// Static RTT map derived from the deployment topology; recovery falls
    /// back to it until fresh measurements arrive.
    latency_seed_rtt_us: BTreeMap<NodeId, u64>,
    /// Commit-value issue rate estimate (per second), for counter-mode
    /// staleness conversion.
    rate_per_sec: u64,
    last_publish: Option<(u64, SimTime)>,
    pub rcp_value: u64,
    pub rcp_epoch: u64,
    pub rcp_collector: NodeId,
    last_publish_heard: SimTime,
    collector: Option<RcpCollector>,
    takeover: Option<Takeover>,
}

struct Takeover {
    pending: BTreeSet<NodeId>,
    floor: u64,
    epoch: u64,
}

fn table_of(key: &str) -> u32 {
    key.strip_prefix('t')
        .and_then(|rest| rest.split('.').next())
        .and_then(|t| t.parse().ok())
        .unwrap_or(0)
}

impl CnState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        node: NodeId,
        idx: u32,
        initial_mode: Mode,
        cfg: CnCfg,
        is_initial_collector: bool,
        replica_members: Vec<NodeId>,
        latency_seed_rtt_us: BTreeMap<NodeId, u64>,
        initial_collector: NodeId,
    ) -> Self {
        let collector = if is_initial_collector {
            Some(RcpCollector::new(replica_members, 1))
        } else {
            None
        };
        let mut c = CnState {
            node,
            idx,
            mode: initial_mode,
            cfg,
            max_issued_clock: 0,
            txns: BTreeMap::new(),
            outcome_log: BTreeMap::new(),
            catalog: Catalog::default(),
            replica_freshness: BTreeMap::new(),
            latency_rtt_us: latency_seed_rtt_us.clone(),
            latency_seed_rtt_us,
            rate_per_sec: 0,
            last_publish: None,
            rcp_value: 0,
            rcp_epoch: 1,
            rcp_collector: initial_collector,
            last_publish_heard: SimTime::ZERO,
            collector,
            takeover: None,
        };
        if let (Some(col), true) = (c.collector.as_mut(), c.cfg.disable_rcp_clamp) {
            col.clamp = false;
        }
        c
    }

    pub fn is_collector(&self) -> bool {
        self.collector.is_some()
    }

    pub fn active_txns(&self) -> usize {
        self.txns.len()
    }

    pub fn has_txn(&self, id: u64) -> bool {
        self.txns.contains_key(&id)
    }

    /// Called when the CN comes back after a crash. The crash lost everything
    /// volatile: in-flight transactions, the collector role, freshness
    /// gossip, and the published point. The two-phase outcome log, the schema
    /// catalog, and the high-water mark of self-issued clock values survive,
    /// since correctness leans on them.
    pub fn on_recovered(&mut self, now: SimTime) {
        self.txns.clear();
        self.collector = None;
        self.takeover = None;
        self.replica_freshness.clear();
        self.latency_rtt_us = self.latency_seed_rtt_us.clone();
        self.rcp_value = 0;
        self.rcp_epoch = 0;
        self.last_publish = None;
        self.rate_per_sec = 0;
        // Treat the wall-clock moment of recovery as freshly heard so the
        // watchdog does not fire the instant the CN comes back.
        self.last_publish_heard = now;
    }

    fn issue_clock(&mut self, reading: &ClockReading) -> u64 {
        let v = reading.upper();
        self.max_issued_clock = self.max_issued_clock.max(v);
        v
    }

    /// Start a transaction. The plan's key set is fixed; the CN picks
    /// snapshot, routing, and commit machinery.
    pub fn begin(
        &mut self,
        id: u64,
        plan: TxnPlan,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let mut txn = Txn {
            id,
            plan,
            mode_at_begin: self.mode,
            phase: Phase::Read,
            snapshot: 0,
            snapshot_mode: self.mode,
            snapshot_acq_at: now.micros(),
            replica_route: false,
            reads_out: BTreeMap::new(),
            reads_seen: BTreeMap::new(),
            effective_snapshot: 0,
            write_shards: BTreeSet::new(),
            votes_pending: BTreeSet::new(),
            decide_pending: BTreeSet::new(),
            commit_ts: 0,
            commit_mode: self.mode,
            commit_acq_at: 0,
        };

        // Replica routing decision happens at begin so the snapshot is the
        // published consistency point rather than a fresh clock reading.
        if txn.plan.read_only && self.cfg.route == RouteCfg::ReplicaAuto && self.rcp_value > 0 {
            let floor = txn.plan.floor;
            let tables: Vec<u32> = txn.plan.reads.iter().map(|k| table_of(k)).collect();
            if floor <= self.rcp_value && self.catalog.allows_replica_read(self.rcp_value, &tables)
            {
                txn.replica_route = true;
                txn.snapshot = self.rcp_value;
                txn.snapshot_mode = self.mode;
                txn.effective_snapshot = self.rcp_value;
                let id = txn.id;
                self.txns.insert(id, txn);
                self.emit_invoke(id, now, out);
                self.dispatch_reads(id, now, clock, topo, out);
                return;
            }
        }

        match self.mode {
            Mode::Clock => {
                txn.snapshot = self.issue_clock(clock);
                txn.snapshot_mode = Mode::Clock;
                txn.effective_snapshot = txn.snapshot;
                txn.phase = Phase::InvokeWait;
                let (id, snap) = (txn.id, txn.snapshot);
                self.txns.insert(id, txn);
                // The begin completes only once this CN's lower bound has
                // passed the snapshot: afterwards every later-issued
                // timestamp anywhere provably exceeds it.
                out.push(Out::WaitValue { txn: id, value: snap });
            }
            Mode::Counter | Mode::Dual => {
                txn.phase = Phase::TsInvoke;
                let id = txn.id;
                let txn_mode = txn.mode_at_begin;
                self.txns.insert(id, txn);
                out.push(Out::Send {
                    dst: topo.ts_server(),
                    msg: Msg::TsReq {
                        txn: id,
                        purpose: TsPurpose::Invoke,
                        txn_mode,
                        clock: Some((clock.upper(), clock.t_err)),
                    },
                });
            }
        }
    }

    fn emit_invoke(&mut self, id: u64, now: SimTime, out: &mut Vec<Out>) {
        let txn = &self.txns[&id];
        out.push(Out::History(HistoryEvent::Invoke {
            txn: id,
            cn: self.idx,
            t: now.micros(),
            snapshot: txn.snapshot,
            snapshot_mode: txn.snapshot_mode,
            acq_at: txn.snapshot_acq_at,
            read_only: txn.plan.read_only,
            rcp_snapshot: txn.replica_route,
        }));
    }

    /// Estimate staleness of a replica's freshness value relative to "now".
    fn staleness_estimate(&self, freshness: u64, clock: &ClockReading) -> u64 {
        match self.mode {
            Mode::Clock => ror::staleness_clock(clock.upper(), freshness),
            Mode::Counter | Mode::Dual => {
                ror::staleness_counter(self.rcp_value, freshness, self.rate_per_sec)
            }
        }
    }

    fn dispatch_reads(
        &mut self,
        id: u64,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let txn = self.txns.get_mut(&id).unwrap();
        if txn.plan.reads.is_empty() {
            self.start_writes(id, now, topo, out);
            return;
        }
        let replica_route = txn.replica_route;
        let bypass =
            txn.plan.read_only && !replica_route && txn.plan.reads.len() == 1;
        let snapshot = txn.snapshot;
        let clock_snapshot = txn.snapshot_mode == Mode::Clock && !replica_route && !bypass;
        let reads = txn.plan.reads.clone();
        let shards = self.cfg.shard_count;
        for key in reads {
            let shard = util::shard_of_key(&key, shards);
            let primary = topo.primary(shard);
            let (dst, route) = if replica_route {
                let mut cands = vec![Candidate {
                    node: primary,
                    staleness_us: 0,
                    latency_us: self.latency_rtt_us.get(&primary).copied().unwrap_or(0),
                }];
                for rep in topo.replicas(shard) {
                    if let Some((_, fresh, heard)) = self.replica_freshness.get(rep) {
                        // A replica can only serve snapshots its applied
                        // prefix covers, and one that stopped reporting is
                        // presumed down rather than routed to.
                        let silent = now.since(*heard) > self.cfg.rcp_stale_after_us;
                        if *fresh >= snapshot && !silent {
                            cands.push(Candidate {
                                node: *rep,
                                staleness_us: self.staleness_estimate(*fresh, clock),
                                latency_us: self
                                    .latency_rtt_us
                                    .get(rep)
                                    .copied()
                                    .unwrap_or(u64::MAX / 2),
                            });
                        }
                    }
                }
                let sky = ror::skyline(&cands);
                let pick = ror::select(&sky, self.cfg.staleness_bound_us)
                    .map(|c| c.node)
                    .unwrap_or(primary);
                let route = if pick == primary {
                    ReadRoute::Primary
                } else {
                    ReadRoute::Replica
                };
                (pick, route)
            } else if bypass {
                (primary, ReadRoute::PrimaryBypass)
            } else {
                (primary, ReadRoute::Primary)
            };
            let txn = self.txns.get_mut(&id).unwrap();
            txn.reads_out.insert(key.clone(), now);
            out.push(Out::Send {
                dst,
                msg: Msg::ReadReq {
                    txn: id,
                    key,
                    snapshot,
                    bypass,
                    replica: route == ReadRoute::Replica,
                    clock_snapshot,
                },
            });
        }
    }

    fn start_writes(&mut self, id: u64, now: SimTime, topo: &Topology, out: &mut Vec<Out>) {
        let shards = self.cfg.shard_count;
        let txn = self.txns.get_mut(&id).unwrap();
        if txn.plan.read_only && txn.plan.ddl_table.is_none() {
            self.finish_committed(id, now, out);
            return;
        }
        if let Some(table) = txn.plan.ddl_table {
            // Schema changes prepare on every shard so all redo streams carry
            // the change.
            txn.phase = Phase::Prepare;
            txn.write_shards = (0..shards).collect();
            txn.votes_pending = txn.write_shards.clone();
            let snapshot = txn.snapshot;
            for s in 0..shards {
                out.push(Out::Send {
                    dst: topo.primary(s),
                    msg: Msg::PrepareReq {
                        txn: id,
                        snapshot,
                        writes: vec![],
                        ddl_table: Some(table),
                    },
                });
            }
            return;
        }
        let mut by_shard: BTreeMap<ShardId, Vec<(Key, u64)>> = BTreeMap::new();
        for (k, v) in &txn.plan.writes {
            by_shard
                .entry(util::shard_of_key(k, shards))
                .or_default()
                .push((k.clone(), *v));
        }
        txn.write_shards = by_shard.keys().copied().collect();
        if by_shard.len() == 1 {
            let (shard, writes) = by_shard.into_iter().next().unwrap();
            txn.phase = Phase::Pend;
            out.push(Out::Send {
                dst: topo.primary(shard),
                msg: Msg::PendReq { txn: id, writes },
            });
        } else {
            txn.phase = Phase::Prepare;
            txn.votes_pending = txn.write_shards.clone();
            let snapshot = txn.snapshot;
            for (shard, writes) in by_shard {
                out.push(Out::Send {
                    dst: topo.primary(shard),
                    msg: Msg::PrepareReq {
                        txn: id,
                        snapshot,
                        writes,
                        ddl_table: None,
                    },
                });
            }
        }
    }

    fn acquire_commit_ts(
        &mut self,
        id: u64,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let mode_at_begin = self.txns[&id].mode_at_begin;
        if self.mode == Mode::Clock && mode_at_begin == Mode::Clock {
            let ts = self.issue_clock(clock);
            let txn = self.txns.get_mut(&id).unwrap();
            txn.commit_ts = ts;
            txn.commit_mode = Mode::Clock;
            txn.commit_acq_at = now.micros();
            if self.cfg.disable_commit_wait {
                self.after_commit_wait(id, now, topo, out);
            } else {
                let txn = self.txns.get_mut(&id).unwrap();
                txn.phase = Phase::CommitWait;
                out.push(Out::WaitValue { txn: id, value: ts });
            }
        } else {
            let txn = self.txns.get_mut(&id).unwrap();
            txn.phase = Phase::TsCommit;
            out.push(Out::Send {
                dst: topo.ts_server(),
                msg: Msg::TsReq {
                    txn: id,
                    purpose: TsPurpose::Commit,
                    txn_mode: mode_at_begin,
                    clock: Some((clock.upper(), clock.t_err)),
                },
            });
        }
    }

    /// Commit timestamp is safe to expose; finalize or decide.
    fn after_commit_wait(
        &mut self,
        id: u64,
        _now: SimTime,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let txn = self.txns.get_mut(&id).unwrap();
        if txn.write_shards.len() == 1 && txn.plan.ddl_table.is_none() {
            txn.phase = Phase::Finalize;
            let shard = *txn.write_shards.iter().next().unwrap();
            let (snapshot, commit_ts) = (txn.snapshot, txn.commit_ts);
            out.push(Out::Send {
                dst: topo.primary(shard),
                msg: Msg::FinalizeReq {
                    txn: id,
                    snapshot,
                    commit_ts,
                },
            });
            // Past this point the outcome belongs to the data node; a timeout
            // may no longer unilaterally abort.
            out.push(Out::RearmTimeout { txn: id });
        } else {
            txn.phase = Phase::Decide;
            txn.decide_pending = txn.write_shards.clone();
            let (commit_ts, ddl) = (txn.commit_ts, txn.plan.ddl_table);
            let shards: Vec<ShardId> = txn.write_shards.iter().copied().collect();
            // Log the decision before telling anyone: recovering participants
            // must find it.
            self.outcome_log.insert(id, Some(commit_ts));
            for s in shards {
                out.push(Out::Send {
                    dst: topo.primary(s),
                    msg: Msg::DecisionReq {
                        txn: id,
                        commit: true,
                        commit_ts,
                        ddl_table: ddl,
                    },
                });
            }
            out.push(Out::RearmTimeout { txn: id });
        }
    }

    fn finish_committed(&mut self, id: u64, now: SimTime, out: &mut Vec<Out>) {
        let txn = self.txns.remove(&id).unwrap();
        let (ts, ts_mode, acq_at) = if txn.plan.read_only && txn.plan.ddl_table.is_none() {
            (txn.effective_snapshot, txn.snapshot_mode, txn.snapshot_acq_at)
        } else {
            (txn.commit_ts, txn.commit_mode, txn.commit_acq_at)
        };
        out.push(Out::History(HistoryEvent::CommitVisible {
            txn: id,
            cn: self.idx,
            t: now.micros(),
            ts,
            ts_mode,
            acq_at,
            writes: txn.plan.writes.iter().map(|(k, _)| k.clone()).collect(),
        }));
        out.push(Out::Done {
            txn: id,
            committed: true,
        });
    }

    fn finish_aborted(
        &mut self,
        id: u64,
        now: SimTime,
        reason: AbortReason,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let txn = match self.txns.remove(&id) {
            Some(t) => t,
            None => return,
        };
        // Release anything participants may still hold.
        match txn.phase {
            Phase::Pend | Phase::TsCommit | Phase::CommitHold | Phase::CommitWait
            | Phase::Prepare => {
                if txn.write_shards.len() > 1 || txn.plan.ddl_table.is_some() {
                    self.outcome_log.insert(id, None);
                }
                for s in &txn.write_shards {
                    out.push(Out::Send {
                        dst: topo.primary(*s),
                        msg: Msg::DecisionReq {
                            txn: id,
                            commit: false,
                            commit_ts: 0,
                            ddl_table: txn.plan.ddl_table,
                        },
                    });
                }
            }
            _ => {}
        }
        out.push(Out::History(HistoryEvent::Abort {
            txn: id,
            cn: self.idx,
            t: now.micros(),
            reason,
        }));
        out.push(Out::Done {
            txn: id,
            committed: false,
        });
    }

    /// A wait (WaitValue or WaitFor) completed for this transaction.
    pub fn on_wait_done(
        &mut self,
        id: u64,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let phase = match self.txns.get(&id) {
            Some(t) => t.phase,
            None => return,
        };
        match phase {
            Phase::InvokeWait => {
                self.txns.get_mut(&id).unwrap().phase = Phase::Read;
                self.emit_invoke(id, now, out);
                self.dispatch_reads(id, now, clock, topo, out);
            }
            Phase::CommitWait | Phase::CommitHold => {
                self.after_commit_wait(id, now, topo, out);
            }
            _ => {}
        }
    }

    pub fn on_txn_timeout(
        &mut self,
        id: u64,
        now: SimTime,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let phase = match self.txns.get(&id) {
            Some(t) => t.phase,
            None => return,
        };
        match phase {
            // The outcome is already decided or in the data node's hands;
            // keep waiting, recovery will complete it.
            Phase::Finalize | Phase::Decide => out.push(Out::RearmTimeout { txn: id }),
            _ => self.finish_aborted(id, now, AbortReason::Timeout, topo, out),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_msg(
        &mut self,
        src: NodeId,
        msg: Msg,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        match msg {
            Msg::TsResp {
                txn,
                purpose,
                granted,
                granted_at,
            } => self.on_ts_resp(txn, purpose, granted, granted_at, now, clock, topo, out),
            Msg::ReadResp {
                txn,
                key,
                hit,
                snapshot,
                served_at,
                blocked_us,
                replica,
                bypass,
                true_staleness_us,
            } => {
                self.on_read_resp(
                    txn,
                    key,
                    hit,
                    snapshot,
                    served_at,
                    blocked_us,
                    replica,
                    bypass,
                    true_staleness_us,
                    src,
                    now,
                    topo,
                    out,
                );
            }
            Msg::PendResp { txn, ok } => {
                if self.txns.get(&txn).map(|t| t.phase) != Some(Phase::Pend) {
                    return;
                }
                if ok {
                    self.acquire_commit_ts(txn, now, clock, topo, out);
                } else {
                    // Nothing staged at the shard; just report.
                    self.txns.get_mut(&txn).unwrap().write_shards.clear();
                    self.finish_aborted(txn, now, AbortReason::WriteConflict, topo, out);
                }
            }
            Msg::FinalizeResp { txn, ok } => {
                if self.txns.get(&txn).map(|t| t.phase) != Some(Phase::Finalize) {
                    return;
                }
                if ok {
                    self.finish_committed(txn, now, out);
                } else {
                    // Validation failed; the shard released the locks itself.
                    self.txns.get_mut(&txn).unwrap().write_shards.clear();
                    self.finish_aborted(txn, now, AbortReason::WriteConflict, topo, out);
                }
            }
            Msg::PrepareResp {
                txn,
                shard,
                vote_yes,
            } => self.on_prepare_resp(txn, shard, vote_yes, now, clock, topo, out),
            Msg::DecisionResp { txn, shard } => {
                let done = {
                    let t = match self.txns.get_mut(&txn) {
                        Some(t) if t.phase == Phase::Decide => t,
                        _ => return,
                    };
                    t.decide_pending.remove(&shard);
                    t.decide_pending.is_empty()
                };
                if done {
                    let ddl = self.txns[&txn].plan.ddl_table;
                    let commit_ts = self.txns[&txn].commit_ts;
                    if let Some(table) = ddl {
                        self.catalog.on_ddl_commit(table, commit_ts);
                        for cn in topo.cns() {
                            if *cn != self.node {
                                out.push(Out::Send {
                                    dst: *cn,
                                    msg: Msg::DdlCommit {
                                        table,
                                        commit_ts,
                                    },
                                });
                            }
                        }
                    }
                    self.finish_committed(txn, now, out);
                }
            }
            Msg::ResolveTxnReq { txn, shard: _ } => {
                let commit = self.outcome_log.get(&txn).copied().unwrap_or(None);
                out.push(Out::Send {
                    dst: src,
                    msg: Msg::ResolveTxnResp { txn, commit },
                });
            }
            Msg::CtlSwitch { mode, direction } => {
                self.mode = mode;
                out.push(Out::History(HistoryEvent::ModeChange {
                    t: now.micros(),
                    node: self.node.0,
                    mode,
                }));
                let _ = direction;
                if mode == Mode::Dual {
                    out.push(Out::Send {
                        dst: src,
                        msg: Msg::CtlDualAck {
                            max_issued_clock: self.max_issued_clock,
                            reading: (clock.upper(), clock.t_err),
                        },
                    });
                } else {
                    out.push(Out::Send {
                        dst: src,
                        msg: Msg::CtlModeAck,
                    });
                }
            }
            Msg::RcpReport {
                shard,
                freshness_ts,
                applied_lsn: _,
            } => {
                let e = self
                    .replica_freshness
                    .entry(src)
                    .or_insert((shard, 0, now));
                e.1 = e.1.max(freshness_ts);
                e.2 = now;
                if let Some(col) = self.collector.as_mut() {
                    if col.is_excluded(src) {
                        col.readmit_if_caught_up(src, freshness_ts);
                    } else if freshness_ts < col.published() {
                        // A rejoining replica reporting below the published
                        // point must not drag it; exclude until caught up.
                        col.exclude(src);
                    }
                    col.on_report(src, freshness_ts, now);
                }
            }
            Msg::RcpPublishMsg {
                value,
                epoch,
                collector,
            } => {
                if epoch > self.rcp_epoch
                    || (epoch == self.rcp_epoch && value >= self.rcp_value)
                    || self.last_publish_heard == SimTime::ZERO
                {
                    // Rate estimate for counter-mode staleness conversion.
                    if let Some((prev_v, prev_t)) = self.last_publish {
                        let dt = now.since(prev_t);
                        if dt > 0 && value > prev_v {
                            let inst = (value - prev_v).saturating_mul(1_000_000) / dt;
                            self.rate_per_sec = util::ema_us(Some(self.rate_per_sec), inst);
                        }
                    }
                    self.last_publish = Some((value, now));
                    self.rcp_value = value;
                    self.rcp_epoch = epoch;
                    self.rcp_collector = collector;
                }
                self.last_publish_heard = now;
            }
            Msg::FloorQuery { epoch: _ } => {
                out.push(Out::Send {
                    dst: src,
                    msg: Msg::FloorResp {
                        floor: self.rcp_value,
                    },
                });
            }
            Msg::FloorResp { floor } => {
                let became = {
                    let t = match self.takeover.as_mut() {
                        Some(t) => t,
                        None => return,
                    };
                    t.pending.remove(&src);
                    t.floor = t.floor.max(floor);
                    t.pending.is_empty()
                };
                if became {
                    self.become_collector(topo, out);
                }
            }
            Msg::DdlCommit { table, commit_ts } => {
                self.catalog.on_ddl_commit(table, commit_ts);
            }
            _ => {}
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_ts_resp(
        &mut self,
        id: u64,
        purpose: TsPurpose,
        granted: Option<(u64, Mode, u64)>,
        granted_at: u64,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let phase = match self.txns.get(&id) {
            Some(t) => t.phase,
            None => return,
        };
        match (purpose, phase) {
            (TsPurpose::Invoke, Phase::TsInvoke) => match granted {
                Some((value, mode, _)) => {
                    {
                        let txn = self.txns.get_mut(&id).unwrap();
                        txn.snapshot = value;
                        txn.snapshot_mode = mode;
                        txn.snapshot_acq_at = granted_at;
                        txn.effective_snapshot = value;
                        txn.phase = Phase::Read;
                    }
                    self.emit_invoke(id, now, out);
                    self.dispatch_reads(id, now, clock, topo, out);
                }
                None => {
                    self.finish_aborted(id, now, AbortReason::StaleCounterMode, topo, out)
                }
            },
            (TsPurpose::Commit, Phase::TsCommit) => match granted {
                Some((value, mode, hold_us)) => {
                    {
                        let txn = self.txns.get_mut(&id).unwrap();
                        txn.commit_ts = value;
                        txn.commit_mode = mode;
                        txn.commit_acq_at = granted_at;
                    }
                    if hold_us > 0 {
                        self.txns.get_mut(&id).unwrap().phase = Phase::CommitHold;
                        out.push(Out::WaitFor {
                            txn: id,
                            us: hold_us,
                        });
                    } else if mode == Mode::Dual && !self.cfg.disable_commit_wait {
                        // Dual grants live on the clock scale; the same
                        // lower-bound wait orders them against real time.
                        self.txns.get_mut(&id).unwrap().phase = Phase::CommitWait;
                        out.push(Out::WaitValue {
                            txn: id,
                            value,
                        });
                    } else {
                        self.after_commit_wait(id, now, topo, out);
                    }
                }
                None => self.finish_aborted(id, now, AbortReason::StaleCounterMode, topo, out),
            },
            _ => {}
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_read_resp(
        &mut self,
        id: u64,
        key: Key,
        hit: Option<ReadHit>,
        snapshot: u64,
        served_at: u64,
        blocked_us: u64,
        replica: bool,
        bypass: bool,
        true_staleness_us: Option<u64>,
        src: NodeId,
        now: SimTime,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        let all_done = {
            let txn = match self.txns.get_mut(&id) {
                Some(t) if t.phase == Phase::Read => t,
                _ => return,
            };
            let sent_at = match txn.reads_out.remove(&key) {
                Some(c) => c,
                None => return,
            };
            if bypass {
                txn.effective_snapshot = snapshot;
            }
            let rtt = now.since(sent_at);
            txn.reads_seen.insert(key.clone(), hit.clone());
            let route = if replica {
                ReadRoute::Replica
            } else if bypass {
                ReadRoute::PrimaryBypass
            } else {
                ReadRoute::Primary
            };
            out.push(Out::History(HistoryEvent::ReadReturn {
                txn: id,
                t: now.micros(),
                key,
                node: src.0,
                route,
                snapshot,
                observed_writer: hit.as_ref().map(|h| h.writer),
                observed_ts: hit.as_ref().map(|h| h.ts),
                observed_data: hit.as_ref().map(|h| h.data),
                served_at,
                blocked_us,
                true_staleness_us,
            }));
            let lat = self.latency_rtt_us.entry(src).or_insert(rtt);
            *lat = util::ema_us(Some(*lat), rtt);
            let txn = self.txns.get_mut(&id).unwrap();
            txn.reads_out.is_empty()
        };
        if all_done {
            let ro = self.txns[&id].plan.read_only && self.txns[&id].plan.ddl_table.is_none();
            if ro {
                self.finish_committed(id, now, out);
            } else {
                self.start_writes(id, now, topo, out);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_prepare_resp(
        &mut self,
        id: u64,
        shard: ShardId,
        vote_yes: bool,
        now: SimTime,
        clock: &ClockReading,
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        match self.txns.get_mut(&id) {
            Some(t) if t.phase == Phase::Prepare => {
                t.votes_pending.remove(&shard);
                if !vote_yes {
                    self.finish_aborted(id, now, AbortReason::WriteConflict, topo, out);
                } else if self.txns[&id].votes_pending.is_empty() {
                    self.acquire_commit_ts(id, now, clock, topo, out);
                }
            }
            _ => {
                // Late vote for a transaction we already resolved; answer
                // from the outcome log so the participant can release.
                if vote_yes {
                    let commit = self.outcome_log.get(&id).copied().unwrap_or(None);
                    out.push(Out::Send {
                        dst: topo.primary(shard),
                        msg: Msg::DecisionReq {
                            txn: id,
                            commit: commit.is_some(),
                            commit_ts: commit.unwrap_or(0),
                            ddl_table: None,
                        },
                    });
                }
            }
        }
    }

    /// Collector duty: fold reports and publish.
    pub fn on_rcp_tick(&mut self, now: SimTime, topo: &Topology, out: &mut Vec<Out>) {
        let stale_after = SimTime(self.cfg.rcp_stale_after_us);
        let status = match self.collector.as_mut() {
            Some(col) => col.publish(now, stale_after),
            None => return,
        };
        self.rcp_value = status.value;
        self.rcp_epoch = status.epoch;
        self.rcp_collector = self.node;
        self.last_publish_heard = now;
        out.push(Out::History(HistoryEvent::RcpPublish {
            t: now.micros(),
            value: status.value,
            epoch: status.epoch,
            collector: self.node.0,
            stale_members: status.stale_members.iter().map(|n| n.0).collect(),
        }));
        for cn in topo.cns() {
            if *cn != self.node {
                out.push(Out::Send {
                    dst: *cn,
                    msg: Msg::RcpPublishMsg {
                        value: status.value,
                        epoch: status.epoch,
                        collector: self.node,
                    },
                });
            }
        }
    }

    /// Watchdog: detect a dead collector and, if this CN is the lowest-id
    /// live CN, take over publication.
    pub fn on_watchdog(
        &mut self,
        now: SimTime,
        alive_cns: &[NodeId],
        topo: &Topology,
        out: &mut Vec<Out>,
    ) {
        if self.collector.is_some() || self.takeover.is_some() {
            return;
        }
        let silent = now.since(self.last_publish_heard) > 3 * self.cfg.rcp_interval_us;
        if !silent {
            return;
        }
        let lowest_alive = alive_cns.iter().min().copied();
        if lowest_alive != Some(self.node) {
            return;
        }
        if alive_cns.contains(&self.rcp_collector) {
            // Collector is alive but we missed publishes (e.g. partition);
            // let it keep the role.
            return;
        }
        let pending: BTreeSet<NodeId> = alive_cns
            .iter()
            .copied()
            .filter(|n| *n != self.node)
            .collect();
        let epoch = self.rcp_epoch + 1;
        let floor = self.rcp_value;
        if pending.is_empty() {
            self.takeover = Some(Takeover {
                pending,
                floor,
                epoch,
            });
            self.become_collector(topo, out);
        } else {
            for cn in &pending {
                out.push(Out::Send {
                    dst: *cn,
                    msg: Msg::FloorQuery { epoch },
                });
            }
            self.takeover = Some(Takeover {
                pending,
                floor,
                epoch,
            });
        }
    }

    fn become_collector(&mut self, topo: &Topology, out: &mut Vec<Out>) {
        let t = self.takeover.take().unwrap();
        let members: Vec<NodeId> = topo.all_replicas().map(|(_, _, n)| n).collect();
        let mut col = RcpCollector::new(members, t.epoch);
        if self.cfg.disable_rcp_clamp {
            col.clamp = false;
        } else {
            col.seed_floor(t.floor.max(self.rcp_value));
        }
        // Start from what we already know about replica freshness.
        for (rep, (_, fresh, at)) in &self.replica_freshness {
            col.on_report(*rep, *fresh, *at);
        }
        self.rcp_epoch = t.epoch;
        self.collector = Some(col);
        out.push(Out::StartPublishing);
    }
}
