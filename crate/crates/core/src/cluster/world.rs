//! The assembled cluster: every node's state, message dispatch, timers, and
//! fault application, driven by the simulation engine.
//!
//! Node logic that has interesting unit-testable structure lives elsewhere
//! (`authority`, `coordinator`, `store`, `replication`, `ror`); this module
//! wires those pieces to the network and the clock bank. Data-node and
//! replica behavior is thin enough that it is implemented here directly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::authority::{AckOutcome, Direction, TsReply, TsRequest, TsServer};
use crate::clocks::{ClockBank, ClockConfig};
use crate::cluster::coordinator::{CnCfg, CnState, Out, TxnPlan};
use crate::cluster::history::{AbortReason, History, HistoryEvent};
use crate::cluster::messages::{Event, Msg, Timer};
use crate::cluster::topology::{NodeId, Role, ShardId, Topology};
use crate::config::{FaultCfg, ScenarioConfig};
use crate::error::SimError;
use crate::replication::{encode_writes_payload, PrimaryLog, RecordKind, RedoRecord, ReplicaApply};
use crate::sim::engine::Engine;
use crate::sim::net::{LatencyMatrix, NetworkModel};
use crate::sim::time::SimTime;
use crate::store::{Key, LockKind, ReadOutcome, ShardStore};
use crate::timestamp::Mode;

/// A transaction that gets no response for this long is abandoned (or, past
/// the decision point, has its timeout re-armed until recovery finishes it).
pub const TXN_TIMEOUT_US: u64 = 1_000_000;

/// Primary housekeeping cadence while it has unresolved prepared locks.
const DN_TICK_US: u64 = 1_000;

/// A read the serving node cannot answer yet: blocked by a lock, by a clock
/// wait, or (replicas) by an applied prefix that does not cover the snapshot.
#[derive(Clone, Debug)]
struct ParkedRead {
    txn: u64,
    key: Key,
    snapshot: u64,
    bypass: bool,
    clock_snapshot: bool,
    from: NodeId,
    arrived: SimTime,
}

/// Primary data node for one shard.
pub struct DnState {
    pub shard: ShardId,
    pub node: NodeId,
    /// Heartbeat stamping mode, following the authority's announcements.
    pub mode: Mode,
    pub store: ShardStore,
    pub log: PrimaryLog,
    /// Highest redo lsn each replica acknowledged; recovery re-ships from
    /// here.
    acked_lsn: BTreeMap<NodeId, u64>,
    parked: Vec<ParkedRead>,
    fetch_inflight: bool,
    last_hb: u64,
    /// Which CN coordinates each staged transaction (durable, drives
    /// recovery resolution).
    coordinator_of: BTreeMap<u64, NodeId>,
    /// Schema-change table per transaction, so a resolved prepare can replay
    /// the catalog change the decision would have carried.
    ddl_of: BTreeMap<u64, u32>,
    /// Transactions whose two-phase decision was already applied, making
    /// duplicate decisions idempotent.
    decided: BTreeSet<u64>,
}

/// Read replica of one shard.
pub struct RepState {
    pub shard: ShardId,
    pub node: NodeId,
    pub app: ReplicaApply,
    parked: Vec<ParkedRead>,
    /// Extra apply delay, modeling a replica that falls behind.
    pub lag_us: u64,
    lag_queue: VecDeque<(SimTime, RedoRecord)>,
}

/// The timestamp authority node.
pub struct TsNode {
    pub node: NodeId,
    pub srv: TsServer,
    mode_acks: BTreeSet<NodeId>,
}

/// Pre-resolved fault, so bad node names fail at build time, not mid-run.
#[derive(Copy, Clone)]
enum FaultOp {
    Crash(NodeId),
    Recover(NodeId),
    Desync {
        node: NodeId,
        offset_us: i64,
        extra_drift_ppm: i64,
    },
    LinkDelay {
        src: NodeId,
        dst: NodeId,
        delay_us: u64,
    },
    LinkClear {
        src: NodeId,
        dst: NodeId,
    },
}

enum WaitCond {
    /// Wake when the owning CN's clock lower bound exceeds the value.
    Value(u64),
    /// Fixed hold; the timer firing is the wake.
    Hold,
}

struct TxnTrack {
    cn_idx: usize,
    client: u32,
    started: SimTime,
}

/// A finished transaction, surfaced to the arrival loop.
#[derive(Copy, Clone, Debug)]
pub struct TxnDone {
    pub txn: u64,
    pub client: u32,
    pub committed: bool,
}

/// Counters and samples accumulated during a run.
#[derive(Default)]
pub struct Metrics {
    pub committed: u64,
    pub aborted: BTreeMap<String, u64>,
    pub latency_us: Vec<u64>,
    pub commits_by_mode: BTreeMap<String, u64>,
    pub read_routes: BTreeMap<String, u64>,
    pub read_blocked_us: Vec<u64>,
    pub rcp_publishes: u64,
    pub transitions_rejected: u64,
}

pub struct World {
    pub cfg: ScenarioConfig,
    pub topo: Topology,
    pub engine: Engine<Event>,
    pub clocks: ClockBank,
    pub tserver: TsNode,
    pub cns: Vec<CnState>,
    pub dns: Vec<DnState>,
    pub reps: BTreeMap<NodeId, RepState>,
    pub history: History,
    pub metrics: Metrics,
    /// Completed transactions since the runner last drained them.
    pub finished: Vec<TxnDone>,
    faults: Vec<FaultOp>,
    waits: BTreeMap<u64, WaitCond>,
    txn_index: BTreeMap<u64, TxnTrack>,
    client_floor: BTreeMap<u32, u64>,
    /// Newest version each in-flight transaction has observed, folded into
    /// the client floor when a read-only transaction finishes.
    txn_seen: BTreeMap<u64, u64>,
    /// Which client submitted each transaction, kept for the session checks
    /// after the run.
    pub txn_client: BTreeMap<u64, u32>,
    next_txn_id: u64,
}

impl World {
    pub fn build(cfg: ScenarioConfig) -> Result<World, SimError> {
        cfg.validate()?;
        let topo = Topology::build(
            cfg.topology.regions.len(),
            &cfg.topology.cn_regions,
            &cfg.topology.shard_primary_regions,
            &cfg.topology.replica_regions,
            cfg.topology.ts_server_region,
        )?;
        let matrix = LatencyMatrix {
            one_way_us: cfg.network.one_way_us.clone(),
            jitter_fraction: cfg.network.jitter_fraction,
            bandwidth_bps: cfg.network.bandwidth_bps,
        };
        matrix.validate()?;
        let mut net = NetworkModel::new(matrix, topo.region_map());
        if cfg.network.authority_extra_us > 0 {
            net.set_node_extra(topo.ts_server(), cfg.network.authority_extra_us);
        }
        let mut engine = Engine::new(net, topo.node_count(), cfg.scenario.seed);
        let clocks = ClockBank::new(
            ClockConfig {
                sync_interval_us: cfg.clocks.sync_interval_us,
                sync_roundtrip_us: cfg.clocks.sync_roundtrip_us,
                drift_bound_ppm: cfg.clocks.drift_bound_ppm,
                epoch_base_us: cfg.clocks.epoch_base_us,
            },
            topo.node_count(),
            &mut engine.rng,
        );

        let ts_node = topo.ts_server();
        let mut srv = TsServer::new(ts_node.0, cfg.authority.initial_mode);
        srv.enable_dual_hold = cfg.authority.enable_dual_hold;
        let tserver = TsNode {
            node: ts_node,
            srv,
            mode_acks: BTreeSet::new(),
        };

        let replica_members: Vec<NodeId> = topo.all_replicas().map(|(_, _, n)| n).collect();
        let cn_cfg = CnCfg {
            route: cfg.reads.route,
            staleness_bound_us: cfg.reads.staleness_bound_us,
            disable_commit_wait: cfg.mutations.disable_commit_wait,
            shard_count: topo.shard_count as u32,
            rcp_interval_us: cfg.replication.rcp_interval_us,
            rcp_stale_after_us: cfg.replication.rcp_stale_after_us,
            disable_rcp_clamp: cfg.mutations.disable_rcp_clamp,
        };
        let mut cns = Vec::new();
        for (i, &cn) in topo.cns().iter().enumerate() {
            let mut rtt_seed = BTreeMap::new();
            for &p in topo.primaries() {
                rtt_seed.insert(p, 2 * engine.net.base_delay_us(cn, p));
            }
            for (_, _, r) in topo.all_replicas() {
                rtt_seed.insert(r, 2 * engine.net.base_delay_us(cn, r));
            }
            cns.push(CnState::new(
                cn,
                i as u32,
                cfg.authority.initial_mode,
                cn_cfg.clone(),
                i == 0,
                replica_members.clone(),
                rtt_seed,
                topo.cn(0),
            ));
        }

        let mut dns = Vec::new();
        for shard in 0..topo.shard_count as ShardId {
            dns.push(DnState {
                shard,
                node: topo.primary(shard),
                mode: cfg.authority.initial_mode,
                store: ShardStore::new(),
                log: PrimaryLog::new(),
                acked_lsn: BTreeMap::new(),
                parked: Vec::new(),
                fetch_inflight: false,
                last_hb: 0,
                coordinator_of: BTreeMap::new(),
                ddl_of: BTreeMap::new(),
                decided: BTreeSet::new(),
            });
        }

        let mut lag_of = BTreeMap::new();
        for l in &cfg.replication.extra_lag {
            lag_of.insert(topo.resolve_name(&l.replica)?, l.lag_us);
        }
        let mut reps = BTreeMap::new();
        for (shard, _, node) in topo.all_replicas() {
            reps.insert(
                node,
                RepState {
                    shard,
                    node,
                    app: ReplicaApply::new(),
                    parked: Vec::new(),
                    lag_us: lag_of.get(&node).copied().unwrap_or(0),
                    lag_queue: VecDeque::new(),
                },
            );
        }

        let mut faults = Vec::new();
        for f in &cfg.faults {
            faults.push(match f {
                FaultCfg::Crash { node, .. } => FaultOp::Crash(topo.resolve_name(node)?),
                FaultCfg::Recover { node, .. } => FaultOp::Recover(topo.resolve_name(node)?),
                FaultCfg::ClockDesync {
                    node,
                    offset_us,
                    extra_drift_ppm,
                    ..
                } => FaultOp::Desync {
                    node: topo.resolve_name(node)?,
                    offset_us: *offset_us,
                    extra_drift_ppm: *extra_drift_ppm,
                },
                FaultCfg::LinkDelay { src, dst, delay_us, .. } => FaultOp::LinkDelay {
                    src: topo.resolve_name(src)?,
                    dst: topo.resolve_name(dst)?,
                    delay_us: *delay_us,
                },
                FaultCfg::LinkDelayClear { src, dst, .. } => FaultOp::LinkClear {
                    src: topo.resolve_name(src)?,
                    dst: topo.resolve_name(dst)?,
                },
            });
        }

        let mut w = World {
            cfg,
            topo,
            engine,
            clocks,
            tserver,
            cns,
            dns,
            reps,
            history: History::default(),
            metrics: Metrics::default(),
            finished: Vec::new(),
            faults,
            waits: BTreeMap::new(),
            txn_index: BTreeMap::new(),
            client_floor: BTreeMap::new(),
            txn_seen: BTreeMap::new(),
            txn_client: BTreeMap::new(),
            next_txn_id: 1,
        };
        w.schedule_initial();
        Ok(w)
    }

    fn schedule_initial(&mut self) {
        let sync = self.clocks.config().sync_interval_us;
        for i in 0..self.topo.node_count() {
            let n = NodeId(i as u32);
            self.engine
                .schedule_after(sync, Some(n), Event::Timer(Timer::ClockSync { node: n }));
        }
        let hb = self.cfg.replication.heartbeat_interval_us;
        for dn in &self.dns {
            self.engine.schedule_after(
                hb,
                Some(dn.node),
                Event::Timer(Timer::Heartbeat { shard: dn.shard }),
            );
        }
        let rcp = self.cfg.replication.rcp_interval_us;
        for (&node, rep) in &self.reps {
            self.engine.schedule_after(
                rcp,
                Some(node),
                Event::Timer(Timer::Report {
                    shard: rep.shard,
                    replica: node,
                }),
            );
        }
        let collector = self.topo.cn(0);
        self.engine
            .schedule_after(rcp, Some(collector), Event::Timer(Timer::RcpTick));
        for i in 0..self.topo.cns().len() {
            let cn = self.topo.cn(i);
            self.engine.schedule_after(
                3 * rcp,
                Some(cn),
                Event::Timer(Timer::RcpWatchdog { cn }),
            );
        }
        for (idx, t) in self.cfg.transitions.iter().enumerate() {
            self.engine.schedule_at(
                SimTime(t.at_us),
                None,
                Event::Timer(Timer::TransitionAt { idx }),
            );
        }
        for (idx, f) in self.cfg.faults.iter().enumerate() {
            self.engine.schedule_at(
                SimTime(f.at_us()),
                None,
                Event::Timer(Timer::FaultAt { idx }),
            );
        }
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    /// Lowest-id CN currently alive; clients fail over to it.
    pub fn lowest_alive_cn(&self) -> Option<usize> {
        (0..self.cns.len()).find(|&i| self.engine.is_alive(self.topo.cn(i)))
    }

    /// Begin a transaction at the given CN. The plan's session floor is
    /// overwritten from the world's per-client record.
    pub fn start_txn(&mut self, cn_idx: usize, mut plan: TxnPlan) -> u64 {
        let id = self.next_txn_id;
        self.next_txn_id += 1;
        // Written values carry the writer's id so a read's observed value
        // identifies which transaction produced it.
        for w in plan.writes.iter_mut() {
            w.1 = id;
        }
        plan.floor = if self.cfg.reads.session_floor {
            self.client_floor.get(&plan.client).copied().unwrap_or(0)
        } else {
            0
        };
        let now = self.engine.now();
        self.txn_client.insert(id, plan.client);
        self.txn_index.insert(
            id,
            TxnTrack {
                cn_idx,
                client: plan.client,
                started: now,
            },
        );
        self.engine.schedule_after(
            TXN_TIMEOUT_US,
            None,
            Event::Timer(Timer::TxnTimeout { txn: id }),
        );
        let node = self.topo.cn(cn_idx);
        let reading = self.clocks.read(node, now);
        let mut outs = Vec::new();
        self.cns[cn_idx].begin(id, plan, now, &reading, &self.topo, &mut outs);
        self.apply_outs(cn_idx, outs);
        id
    }

    /// Process one engine event. Timers the world does not own (arrivals,
    /// scripts, workload kicks) are handed back to the caller.
    pub fn handle(&mut self, owner: Option<NodeId>, ev: Event) -> Option<Timer> {
        match ev {
            Event::Deliver { src, dst, msg } => {
                self.deliver(src, dst, msg);
                None
            }
            Event::Timer(t) => self.handle_timer(owner, t),
        }
    }

    /// Drive the world until `until`, discarding runner-level timers. Tests
    /// and scripted scenarios that pre-arrange everything use this.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(f) = self.engine.pop_due(until) {
            self.handle(f.owner, f.event);
        }
        self.engine.finish_window(until);
    }

    fn handle_timer(&mut self, owner: Option<NodeId>, t: Timer) -> Option<Timer> {
        match t {
            Timer::ClockSync { node } => {
                let World { clocks, engine, .. } = self;
                clocks.on_sync_done(node, engine.now(), &mut engine.rng);
                let sync = clocks.config().sync_interval_us;
                engine.schedule_after(sync, Some(node), Event::Timer(Timer::ClockSync { node }));
            }
            Timer::Heartbeat { shard } => self.dn_heartbeat(shard),
            Timer::Report { shard, replica } => self.rep_report(shard, replica),
            Timer::RcpTick => self.rcp_tick(owner),
            Timer::RcpWatchdog { cn } => self.watchdog(cn),
            Timer::WaitCheck { txn } => self.wait_check(txn),
            Timer::Residence => self.residence_check(),
            Timer::TransitionAt { idx } => self.start_transition(idx),
            Timer::FaultAt { idx } => self.apply_fault(idx),
            Timer::LaggedApply { shard: _, replica } => self.rep_drain_lag(replica),
            Timer::DnTick { shard } => self.dn_tick(shard),
            Timer::TxnTimeout { txn } => self.txn_timeout(txn),
            other => return Some(other),
        }
        None
    }

    // ------------------------------------------------------------------
    // Outgoing actions from coordinator logic.

    fn apply_outs(&mut self, cn_idx: usize, outs: Vec<Out>) {
        let cn_node = self.topo.cn(cn_idx);
        for o in outs {
            match o {
                Out::Send { dst, msg } => self.post(cn_node, dst, msg),
                Out::WaitValue { txn, value } => {
                    self.waits.insert(txn, WaitCond::Value(value));
                    let now = self.engine.now();
                    let reading = self.clocks.read(cn_node, now);
                    let est = self.clocks.estimate_until_value_exceeds(
                        cn_node,
                        now,
                        value + reading.t_err,
                    );
                    self.engine.schedule_after(
                        est,
                        Some(cn_node),
                        Event::Timer(Timer::WaitCheck { txn }),
                    );
                }
                Out::WaitFor { txn, us } => {
                    self.waits.insert(txn, WaitCond::Hold);
                    self.engine.schedule_after(
                        us,
                        Some(cn_node),
                        Event::Timer(Timer::WaitCheck { txn }),
                    );
                }
                Out::RearmTimeout { txn } => {
                    self.engine.schedule_after(
                        TXN_TIMEOUT_US,
                        None,
                        Event::Timer(Timer::TxnTimeout { txn }),
                    );
                }
                Out::History(ev) => self.record(ev),
                Out::Done { txn, committed } => {
                    self.waits.remove(&txn);
                    if let Some(track) = self.txn_index.remove(&txn) {
                        let lat = self.engine.now().since(track.started);
                        if committed {
                            self.metrics.committed += 1;
                            self.metrics.latency_us.push(lat);
                        }
                        self.finished.push(TxnDone {
                            txn,
                            client: track.client,
                            committed,
                        });
                    }
                }
                Out::StartPublishing => {
                    self.engine
                        .schedule_after(0, Some(cn_node), Event::Timer(Timer::RcpTick));
                }
            }
        }
    }

    fn record(&mut self, ev: HistoryEvent) {
        match &ev {
            HistoryEvent::CommitVisible {
                ts,
                txn,
                ts_mode,
                writes,
                ..
            } => {
                if self.cfg.reads.session_floor {
                    // The floor is the least timestamp later snapshots must
                    // cover: the commit itself when the transaction wrote,
                    // otherwise the newest version it observed. Binding
                    // read-only sessions to their full (possibly very fresh)
                    // snapshot would lock them out of replica reads for no
                    // gain in the guarantees.
                    let bind = if writes.is_empty() {
                        self.txn_seen.remove(txn).unwrap_or(0)
                    } else {
                        *ts
                    };
                    if let Some(track) = self.txn_index.get(txn) {
                        let f = self.client_floor.entry(track.client).or_insert(0);
                        *f = (*f).max(bind);
                    }
                }
                self.txn_seen.remove(txn);
                *self
                    .metrics
                    .commits_by_mode
                    .entry(ts_mode.to_string())
                    .or_insert(0) += 1;
            }
            HistoryEvent::Abort { txn, reason, .. } => {
                self.txn_seen.remove(txn);
                *self
                    .metrics
                    .aborted
                    .entry(format!("{reason:?}"))
                    .or_insert(0) += 1;
            }
            HistoryEvent::ReadReturn {
                txn,
                route,
                blocked_us,
                observed_ts,
                ..
            } => {
                if let Some(v) = observed_ts {
                    let e = self.txn_seen.entry(*txn).or_insert(0);
                    *e = (*e).max(*v);
                }
                *self
                    .metrics
                    .read_routes
                    .entry(format!("{route:?}"))
                    .or_insert(0) += 1;
                self.metrics.read_blocked_us.push(*blocked_us);
            }
            HistoryEvent::RcpPublish { .. } => self.metrics.rcp_publishes += 1,
            _ => {}
        }
        self.history.push(ev);
    }

    fn post(&mut self, src: NodeId, dst: NodeId, msg: Msg) {
        let size = msg.size_bytes();
        self.engine
            .send(src, dst, size, Event::Deliver { src, dst, msg });
    }

    // ------------------------------------------------------------------
    // Delivery dispatch.

    fn deliver(&mut self, src: NodeId, dst: NodeId, msg: Msg) {
        match self.topo.role(dst) {
            Role::TsServer => self.ts_on_msg(src, msg),
            Role::Cn { idx } => self.cn_on_msg(idx as usize, src, msg),
            Role::Primary { shard } => self.dn_on_msg(shard, src, msg),
            Role::Replica { .. } => self.rep_on_msg(dst, src, msg),
            Role::TimeDevice { .. } => {}
        }
    }

    fn cn_on_msg(&mut self, idx: usize, src: NodeId, msg: Msg) {
        let now = self.engine.now();
        let node = self.topo.cn(idx);
        let reading = self.clocks.read(node, now);
        let mut outs = Vec::new();
        self.cns[idx].on_msg(src, msg, now, &reading, &self.topo, &mut outs);
        self.apply_outs(idx, outs);
    }

    // ------------------------------------------------------------------
    // Timestamp authority node.

    fn ts_on_msg(&mut self, src: NodeId, msg: Msg) {
        let now = self.engine.now();
        let me = self.tserver.node;
        match msg {
            Msg::TsReq {
                txn,
                purpose,
                txn_mode,
                clock,
            } => {
                let reply = self.tserver.srv.grant(TsRequest { txn_mode, clock });
                let granted = match reply {
                    TsReply::Granted { ts, hold_us } => Some((ts.value, ts.mode, hold_us)),
                    TsReply::StaleCounterMode => None,
                };
                self.post(
                    me,
                    src,
                    Msg::TsResp {
                        txn,
                        purpose,
                        granted,
                        granted_at: now.micros(),
                    },
                );
            }
            Msg::CounterFetch { shard } => {
                let value = self.tserver.srv.counter();
                self.post(
                    me,
                    src,
                    Msg::CounterVal {
                        shard,
                        value,
                        granted_at: now.micros(),
                    },
                );
            }
            Msg::CtlDualAck {
                max_issued_clock,
                reading,
            } => {
                let direction = self.tserver.srv.transition().map(|t| t.direction);
                match self.tserver.srv.on_dual_ack(src, max_issued_clock, reading, now) {
                    AckOutcome::Pending | AckOutcome::Completed => {}
                    AckOutcome::StartResidence { wait_us } => {
                        self.engine.schedule_after(
                            wait_us,
                            Some(me),
                            Event::Timer(Timer::Residence),
                        );
                    }
                    AckOutcome::SwitchServer { to } => {
                        let direction = direction.expect("switch without transition");
                        self.broadcast_switch(to, direction);
                    }
                }
            }
            Msg::CtlModeAck => {
                let direction = self.tserver.srv.transition().map(|t| t.direction);
                let cns_total = self.topo.cns().len();
                let TsNode { srv, mode_acks, .. } = &mut self.tserver;
                if let AckOutcome::Completed = srv.on_mode_ack(src, cns_total, mode_acks) {
                    let direction = direction.expect("completion without transition");
                    self.record(HistoryEvent::TransitionDone {
                        t: now.micros(),
                        direction: direction.label().to_string(),
                    });
                }
            }
            _ => {}
        }
    }

    fn start_transition(&mut self, idx: usize) {
        let now = self.engine.now();
        let direction = self.cfg.transitions[idx].direction;
        let cns: Vec<NodeId> = self.topo.cns().to_vec();
        match self.tserver.srv.start_transition(direction, cns, now) {
            Ok(()) => {
                self.record(HistoryEvent::TransitionStart {
                    t: now.micros(),
                    direction: direction.label().to_string(),
                });
                self.record(HistoryEvent::ModeChange {
                    t: now.micros(),
                    node: self.tserver.node.0,
                    mode: Mode::Dual,
                });
                self.broadcast_ctl(Mode::Dual, direction);
            }
            Err(_) => self.metrics.transitions_rejected += 1,
        }
    }

    /// The server itself switched to the transition's final mode; tell every
    /// node and start collecting mode acks.
    fn broadcast_switch(&mut self, to: Mode, direction: Direction) {
        let now = self.engine.now();
        self.record(HistoryEvent::ModeChange {
            t: now.micros(),
            node: self.tserver.node.0,
            mode: to,
        });
        self.tserver.mode_acks.clear();
        self.broadcast_ctl(to, direction);
    }

    fn broadcast_ctl(&mut self, mode: Mode, direction: Direction) {
        let me = self.tserver.node;
        let targets: Vec<NodeId> = self
            .topo
            .cns()
            .iter()
            .copied()
            .chain(self.topo.primaries().iter().copied())
            .collect();
        for dst in targets {
            self.post(me, dst, Msg::CtlSwitch { mode, direction });
        }
    }

    fn residence_check(&mut self) {
        let now = self.engine.now();
        let me = self.tserver.node;
        let reading = self.clocks.read(me, now);
        let direction = self.tserver.srv.transition().map(|t| t.direction);
        match self.tserver.srv.on_residence_elapsed(reading.lower()) {
            Some(mode) => {
                let direction = direction.expect("residence without transition");
                self.broadcast_switch(mode, direction);
            }
            None => {
                use crate::authority::Phase;
                let residing = self
                    .tserver
                    .srv
                    .transition()
                    .is_some_and(|t| t.phase == Phase::DualResidence);
                if !residing {
                    return;
                }
                // Not past the issued counter values yet; re-arm around the
                // estimated catch-up point and check again.
                let target = self.tserver.srv.counter() + reading.t_err;
                let est = self.clocks.estimate_until_value_exceeds(me, now, target);
                self.engine.schedule_after(
                    est.max(1),
                    Some(me),
                    Event::Timer(Timer::Residence),
                );
            }
        }
    }

    // ------------------------------------------------------------------
    // CN-side timers.

    fn wait_check(&mut self, txn: u64) {
        let Some(track) = self.txn_index.get(&txn) else {
            self.waits.remove(&txn);
            return;
        };
        let cn_idx = track.cn_idx;
        let node = self.topo.cn(cn_idx);
        let now = self.engine.now();
        match self.waits.get(&txn) {
            None => return,
            Some(WaitCond::Hold) => {}
            Some(WaitCond::Value(v)) => {
                let v = *v;
                let reading = self.clocks.read(node, now);
                if reading.lower() <= v {
                    let wait = (v + reading.t_err + 1).saturating_sub(reading.t_clock).max(1);
                    self.engine.schedule_after(
                        wait,
                        Some(node),
                        Event::Timer(Timer::WaitCheck { txn }),
                    );
                    return;
                }
            }
        }
        self.waits.remove(&txn);
        let reading = self.clocks.read(node, now);
        let mut outs = Vec::new();
        self.cns[cn_idx].on_wait_done(txn, now, &reading, &self.topo, &mut outs);
        self.apply_outs(cn_idx, outs);
    }

    fn txn_timeout(&mut self, txn: u64) {
        let Some(track) = self.txn_index.get(&txn) else {
            return;
        };
        let cn_idx = track.cn_idx;
        let node = self.topo.cn(cn_idx);
        let now = self.engine.now();
        if self.engine.is_alive(node) && self.cns[cn_idx].has_txn(txn) {
            let mut outs = Vec::new();
            self.cns[cn_idx].on_txn_timeout(txn, now, &self.topo, &mut outs);
            self.apply_outs(cn_idx, outs);
        } else {
            // The CN died with this transaction in flight; the client learns
            // nothing more, so account it as unavailable and move on.
            let track = self.txn_index.remove(&txn).unwrap();
            self.waits.remove(&txn);
            self.record(HistoryEvent::Abort {
                txn,
                cn: cn_idx as u32,
                t: now.micros(),
                reason: AbortReason::NodeUnavailable,
            });
            self.finished.push(TxnDone {
                txn,
                client: track.client,
                committed: false,
            });
        }
    }

    fn rcp_tick(&mut self, owner: Option<NodeId>) {
        let Some(node) = owner else { return };
        let Some(idx) = self.topo.cns().iter().position(|&c| c == node) else {
            return;
        };
        if !self.cns[idx].is_collector() {
            return;
        }
        let now = self.engine.now();
        let mut outs = Vec::new();
        self.cns[idx].on_rcp_tick(now, &self.topo, &mut outs);
        self.apply_outs(idx, outs);
        self.engine.schedule_after(
            self.cfg.replication.rcp_interval_us,
            Some(node),
            Event::Timer(Timer::RcpTick),
        );
    }

    fn watchdog(&mut self, cn: NodeId) {
        let Some(idx) = self.topo.cns().iter().position(|&c| c == cn) else {
            return;
        };
        let now = self.engine.now();
        let alive: Vec<NodeId> = self
            .topo
            .cns()
            .iter()
            .copied()
            .filter(|&n| self.engine.is_alive(n))
            .collect();
        let mut outs = Vec::new();
        self.cns[idx].on_watchdog(now, &alive, &self.topo, &mut outs);
        self.apply_outs(idx, outs);
        self.engine.schedule_after(
            self.cfg.replication.rcp_interval_us,
            Some(cn),
            Event::Timer(Timer::RcpWatchdog { cn }),
        );
    }

    // ------------------------------------------------------------------
    // Primary data node.

    fn dn_on_msg(&mut self, shard: ShardId, src: NodeId, msg: Msg) {
        let now = self.engine.now();
        let s = shard as usize;
        match msg {
            Msg::ReadReq {
                txn,
                key,
                snapshot,
                bypass,
                replica: _,
                clock_snapshot,
            } => {
                let pr = ParkedRead {
                    txn,
                    key,
                    snapshot,
                    bypass,
                    clock_snapshot,
                    from: src,
                    arrived: now,
                };
                self.dn_try_read(s, pr);
            }
            Msg::PendReq { txn, writes } => {
                let dn = &mut self.dns[s];
                let ok = dn.store.pend_commit(txn, &writes).is_ok();
                if ok {
                    dn.coordinator_of.insert(txn, src);
                    let keys: Vec<Key> = writes.iter().map(|(k, _)| k.clone()).collect();
                    let payload = encode_writes_payload(&writes);
                    let at = self.engine.now().micros();
                    dn.log
                        .append(RecordKind::PendingCommit, txn, 0, at, keys, payload);
                    self.ship_last(s);
                }
                self.post(self.dns[s].node, src, Msg::PendResp { txn, ok });
            }
            Msg::FinalizeReq {
                txn,
                snapshot,
                commit_ts,
            } => {
                let dn = &mut self.dns[s];
                let ok = if !dn.store.has_locks(txn) {
                    // Recovery already aborted this pending commit; the
                    // acknowledgement was never sent, so refusing is safe.
                    false
                } else {
                    match dn.store.finalize(txn, snapshot, commit_ts) {
                        Ok(writes) => {
                            let keys: Vec<Key> = writes.iter().map(|(k, _)| k.clone()).collect();
                            let payload = encode_writes_payload(&writes);
                            dn.log.append(
                                RecordKind::Commit,
                                txn,
                                commit_ts,
                                now.micros(),
                                keys,
                                payload,
                            );
                            true
                        }
                        Err(_) => {
                            dn.log.append(
                                RecordKind::Abort,
                                txn,
                                0,
                                now.micros(),
                                Vec::new(),
                                Vec::new(),
                            );
                            false
                        }
                    }
                };
                self.ship_last(s);
                self.post(self.dns[s].node, src, Msg::FinalizeResp { txn, ok });
                self.dn_unpark(s);
            }
            Msg::PrepareReq {
                txn,
                snapshot,
                writes,
                ddl_table,
            } => {
                let dn = &mut self.dns[s];
                let vote_yes = dn.store.prepare(txn, snapshot, &writes).is_ok();
                if vote_yes {
                    dn.coordinator_of.insert(txn, src);
                    if let Some(t) = ddl_table {
                        dn.ddl_of.insert(txn, t);
                    }
                    let keys: Vec<Key> = writes.iter().map(|(k, _)| k.clone()).collect();
                    let payload = encode_writes_payload(&writes);
                    let at = self.engine.now().micros();
                    dn.log.append(RecordKind::Prepare, txn, 0, at, keys, payload);
                    self.ship_last(s);
                }
                self.post(
                    self.dns[s].node,
                    src,
                    Msg::PrepareResp {
                        txn,
                        shard,
                        vote_yes,
                    },
                );
            }
            Msg::DecisionReq {
                txn,
                commit,
                commit_ts,
                ddl_table,
            } => {
                if self.dns[s].decided.insert(txn) {
                    self.dn_apply_decision(s, txn, commit.then_some(commit_ts), ddl_table);
                }
                self.post(self.dns[s].node, src, Msg::DecisionResp { txn, shard });
            }
            Msg::ResolveTxnResp { txn, commit } => {
                if self.dns[s].store.has_locks(txn) && self.dns[s].decided.insert(txn) {
                    let ddl = self.dns[s].ddl_of.get(&txn).copied();
                    self.dn_apply_decision(s, txn, commit, ddl);
                }
            }
            Msg::ResumeReq { applied_lsn, .. } => {
                let records = self.dns[s].log.suffix(applied_lsn).to_vec();
                if !records.is_empty() {
                    self.post(self.dns[s].node, src, Msg::RedoShip { shard, records });
                }
            }
            Msg::RedoAck { applied_lsn, .. } => {
                let e = self.dns[s].acked_lsn.entry(src).or_insert(0);
                *e = (*e).max(applied_lsn);
            }
            Msg::CounterVal { value, .. } => {
                let dn = &mut self.dns[s];
                dn.fetch_inflight = false;
                if value > dn.last_hb {
                    dn.last_hb = value;
                    let at = self.engine.now().micros();
                    dn.log
                        .append(RecordKind::Heartbeat, 0, value, at, Vec::new(), Vec::new());
                    self.ship_last(s);
                }
            }
            Msg::CtlSwitch { mode, .. } => {
                self.dns[s].mode = mode;
            }
            _ => {}
        }
    }

    /// Serve a primary read or park it. Bypass reads serve at the latest
    /// committed timestamp; self-issued clock snapshots wait until the
    /// primary's clock lower bound passes the snapshot, so no later commit
    /// can slot under it on an unlocked key.
    fn dn_try_read(&mut self, s: usize, pr: ParkedRead) {
        let now = self.engine.now();
        let node = self.dns[s].node;
        let snap = if pr.bypass {
            self.dns[s].store.max_committed_ts()
        } else {
            pr.snapshot
        };
        if pr.clock_snapshot && !pr.bypass {
            let reading = self.clocks.read(node, now);
            if reading.lower() <= snap {
                let target = snap + reading.t_err;
                let est = self.clocks.estimate_until_value_exceeds(node, now, target);
                let shard = self.dns[s].shard;
                self.dns[s].parked.push(pr);
                self.engine.schedule_after(
                    est.max(1),
                    Some(node),
                    Event::Timer(Timer::DnTick { shard }),
                );
                return;
            }
        }
        match self.dns[s].store.read(&pr.key, snap) {
            ReadOutcome::Blocked { .. } => self.dns[s].parked.push(pr),
            ReadOutcome::Ready(hit) => {
                let resp = Msg::ReadResp {
                    txn: pr.txn,
                    key: pr.key,
                    hit,
                    snapshot: snap,
                    served_at: now.micros(),
                    blocked_us: now.since(pr.arrived),
                    replica: false,
                    bypass: pr.bypass,
                    true_staleness_us: None,
                };
                self.post(node, pr.from, resp);
            }
        }
    }

    fn dn_unpark(&mut self, s: usize) {
        let parked = std::mem::take(&mut self.dns[s].parked);
        for pr in parked {
            self.dn_try_read(s, pr);
        }
    }

    /// Install or abort a staged transaction, appending the matching redo.
    fn dn_apply_decision(&mut self, s: usize, txn: u64, commit: Option<u64>, ddl: Option<u32>) {
        let dn = &mut self.dns[s];
        match commit {
            Some(commit_ts) => {
                if dn.store.has_locks(txn) {
                    let writes = dn.store.staged_writes(txn).unwrap_or(&[]).to_vec();
                    dn.store.install(txn, commit_ts);
                    let keys: Vec<Key> = writes.iter().map(|(k, _)| k.clone()).collect();
                    let payload = encode_writes_payload(&writes);
                    let at = self.engine.now().micros();
                    dn.log
                        .append(RecordKind::CommitPrepared, txn, commit_ts, at, keys, payload);
                    self.ship_last(s);
                }
                if let Some(table) = ddl {
                    let dn = &mut self.dns[s];
                    dn.store.apply_ddl(table, commit_ts);
                    dn.log.append(
                        RecordKind::Ddl,
                        txn,
                        commit_ts,
                        self.engine.now().micros(),
                        Vec::new(),
                        table.to_le_bytes().to_vec(),
                    );
                    self.ship_last(s);
                }
            }
            None => {
                let kind = match dn.store.lock_kind_of(txn) {
                    Some(LockKind::PendingCommit) => RecordKind::Abort,
                    _ => RecordKind::AbortPrepared,
                };
                if dn.store.has_locks(txn) {
                    dn.store.release(txn);
                    let at = self.engine.now().micros();
                    dn.log.append(kind, txn, 0, at, Vec::new(), Vec::new());
                    self.ship_last(s);
                }
            }
        }
        self.dn_unpark(s);
    }

    fn ship_last(&mut self, s: usize) {
        let dn = &self.dns[s];
        let lsn = dn.log.last_lsn();
        let Some(rec) = dn.log.get(lsn) else { return };
        let rec = rec.clone();
        let node = dn.node;
        let shard = dn.shard;
        let replicas: Vec<NodeId> = self.topo.replicas(shard).to_vec();
        for rep in replicas {
            self.post(
                node,
                rep,
                Msg::RedoShip {
                    shard,
                    records: vec![rec.clone()],
                },
            );
        }
    }

    fn dn_heartbeat(&mut self, shard: ShardId) {
        let s = shard as usize;
        let now = self.engine.now();
        let node = self.dns[s].node;
        match self.dns[s].mode {
            Mode::Clock => {
                let reading = self.clocks.read(node, now);
                // The promise must be conservative: no future commit may be
                // stamped below it. The lower bound guarantees that; the
                // upper-bound variant is a deliberately unsound mutation.
                let value = if self.cfg.mutations.heartbeat_upper_bound {
                    reading.upper()
                } else {
                    reading.lower()
                };
                let dn = &mut self.dns[s];
                if value > dn.last_hb {
                    dn.last_hb = value;
                    let at = now.micros();
                    dn.log
                        .append(RecordKind::Heartbeat, 0, value, at, Vec::new(), Vec::new());
                    self.ship_last(s);
                }
            }
            Mode::Counter | Mode::Dual => {
                let ts = self.tserver.node;
                if !self.dns[s].fetch_inflight {
                    self.dns[s].fetch_inflight = true;
                    self.post(node, ts, Msg::CounterFetch { shard });
                }
            }
        }
        self.engine.schedule_after(
            self.cfg.replication.heartbeat_interval_us,
            Some(node),
            Event::Timer(Timer::Heartbeat { shard }),
        );
    }

    fn dn_tick(&mut self, shard: ShardId) {
        let s = shard as usize;
        self.dn_unpark(s);
        // Prepared transactions whose decision never arrived (coordinator
        // crash windows) are chased until resolved.
        let node = self.dns[s].node;
        let staged = self.dns[s].store.staged_txns();
        let mut chased = false;
        for (txn, kind) in staged {
            if kind == LockKind::Prepared && !self.dns[s].decided.contains(&txn) {
                if let Some(&coord) = self.dns[s].coordinator_of.get(&txn) {
                    self.post(node, coord, Msg::ResolveTxnReq { txn, shard });
                    chased = true;
                }
            }
        }
        if chased {
            self.engine.schedule_after(
                DN_TICK_US,
                Some(node),
                Event::Timer(Timer::DnTick { shard }),
            );
        }
    }

    // ------------------------------------------------------------------
    // Replica.

    fn rep_on_msg(&mut self, me: NodeId, src: NodeId, msg: Msg) {
        let now = self.engine.now();
        match msg {
            Msg::RedoShip { records, .. } => {
                let rep = self.reps.get_mut(&me).unwrap();
                if rep.lag_us > 0 {
                    let due = now.plus(rep.lag_us);
                    let shard = rep.shard;
                    for r in records {
                        rep.lag_queue.push_back((due, r));
                    }
                    self.engine.schedule_at(
                        due,
                        Some(me),
                        Event::Timer(Timer::LaggedApply { shard, replica: me }),
                    );
                } else {
                    self.rep_apply(me, records);
                }
            }
            Msg::ReadReq {
                txn,
                key,
                snapshot,
                bypass,
                clock_snapshot,
                ..
            } => {
                let pr = ParkedRead {
                    txn,
                    key,
                    snapshot,
                    bypass,
                    clock_snapshot,
                    from: src,
                    arrived: now,
                };
                self.rep_try_read(me, pr);
            }
            _ => {}
        }
    }

    fn rep_try_read(&mut self, me: NodeId, pr: ParkedRead) {
        let now = self.engine.now();
        let rep = self.reps.get_mut(&me).unwrap();
        // A replica serves a snapshot only once its applied prefix provably
        // covers it; until then the read waits for replication to catch up.
        if pr.snapshot > rep.app.freshness_ts {
            rep.parked.push(pr);
            return;
        }
        match rep.app.store.read(&pr.key, pr.snapshot) {
            ReadOutcome::Blocked { .. } => rep.parked.push(pr),
            ReadOutcome::Ready(hit) => {
                // Oracle-true lag: how long ago the first record this
                // replica has not yet applied was appended at the primary
                // (zero when it has applied the whole log). The replica
                // itself could not know this; it rides along for audits.
                let next = rep.app.applied_lsn + 1;
                let log = &self.dns[rep.shard as usize].log;
                let staleness = match log.get(next) {
                    Some(rec) => now.micros().saturating_sub(rec.appended_at),
                    None => 0,
                };
                let resp = Msg::ReadResp {
                    txn: pr.txn,
                    key: pr.key,
                    hit,
                    snapshot: pr.snapshot,
                    served_at: now.micros(),
                    blocked_us: now.since(pr.arrived),
                    replica: true,
                    bypass: false,
                    true_staleness_us: Some(staleness),
                };
                self.post(me, pr.from, resp);
            }
        }
    }

    fn rep_apply(&mut self, me: NodeId, records: Vec<RedoRecord>) {
        let rep = self.reps.get_mut(&me).unwrap();
        let shard = rep.shard;
        let mut advanced = false;
        let mut gap = None;
        for r in &records {
            if r.lsn <= rep.app.applied_lsn {
                continue;
            }
            if r.lsn > rep.app.applied_lsn + 1 {
                gap = Some(rep.app.applied_lsn);
                break;
            }
            rep.app
                .apply(r)
                .expect("contiguous redo apply cannot fail");
            advanced = true;
        }
        let applied = rep.app.applied_lsn;
        let primary = self.topo.primary(shard);
        if let Some(applied_lsn) = gap {
            self.post(me, primary, Msg::ResumeReq { shard, applied_lsn });
        }
        if advanced {
            self.post(
                me,
                primary,
                Msg::RedoAck {
                    shard,
                    applied_lsn: applied,
                },
            );
            self.rep_unpark(me);
        }
    }

    fn rep_unpark(&mut self, me: NodeId) {
        let parked = std::mem::take(&mut self.reps.get_mut(&me).unwrap().parked);
        for pr in parked {
            self.rep_try_read(me, pr);
        }
    }

    fn rep_drain_lag(&mut self, me: NodeId) {
        let now = self.engine.now();
        let rep = self.reps.get_mut(&me).unwrap();
        let mut due = Vec::new();
        while rep.lag_queue.front().is_some_and(|(d, _)| *d <= now) {
            due.push(rep.lag_queue.pop_front().unwrap().1);
        }
        if !due.is_empty() {
            self.rep_apply(me, due);
        }
    }

    fn rep_report(&mut self, shard: ShardId, me: NodeId) {
        let rep = &self.reps[&me];
        let freshness_ts = rep.app.freshness_ts;
        let applied_lsn = rep.app.applied_lsn;
        let cns: Vec<NodeId> = self.topo.cns().to_vec();
        for cn in cns {
            self.post(
                me,
                cn,
                Msg::RcpReport {
                    shard,
                    freshness_ts,
                    applied_lsn,
                },
            );
        }
        self.engine.schedule_after(
            self.cfg.replication.rcp_interval_us,
            Some(me),
            Event::Timer(Timer::Report { shard, replica: me }),
        );
    }

    // ------------------------------------------------------------------
    // Faults.

    fn apply_fault(&mut self, idx: usize) {
        match self.faults[idx] {
            FaultOp::Crash(node) => {
                self.engine.apply_crash(node);
            }
            FaultOp::Recover(node) => {
                self.engine.apply_recover(node);
                self.on_recover(node);
            }
            FaultOp::Desync {
                node,
                offset_us,
                extra_drift_ppm,
            } => self.clocks.apply_desync(node, offset_us, extra_drift_ppm),
            FaultOp::LinkDelay { src, dst, delay_us } => {
                self.engine.net.set_link_override(src, dst, delay_us)
            }
            FaultOp::LinkClear { src, dst } => self.engine.net.clear_link_override(src, dst),
        }
    }

    /// Rebuild a node's timers and volatile state after recovery. Durable
    /// state (stores, logs, outcome logs, catalogs) survived the crash;
    /// everything in flight did not.
    fn on_recover(&mut self, node: NodeId) {
        let now = self.engine.now();
        let sync = self.clocks.config().sync_interval_us;
        self.engine
            .schedule_after(sync, Some(node), Event::Timer(Timer::ClockSync { node }));
        match self.topo.role(node) {
            Role::Cn { idx } => {
                let idx = idx as usize;
                self.cns[idx].on_recovered(now);
                self.engine.schedule_after(
                    3 * self.cfg.replication.rcp_interval_us,
                    Some(node),
                    Event::Timer(Timer::RcpWatchdog { cn: node }),
                );
            }
            Role::Primary { shard } => self.dn_recover(shard),
            Role::Replica { shard, .. } => {
                let rep = self.reps.get_mut(&node).unwrap();
                rep.parked.clear();
                rep.lag_queue.clear();
                let applied_lsn = rep.app.applied_lsn;
                let primary = self.topo.primary(shard);
                self.post(node, primary, Msg::ResumeReq { shard, applied_lsn });
                self.engine.schedule_after(
                    self.cfg.replication.rcp_interval_us,
                    Some(node),
                    Event::Timer(Timer::Report {
                        shard,
                        replica: node,
                    }),
                );
            }
            Role::TsServer => {
                use crate::authority::Phase;
                if self
                    .tserver
                    .srv
                    .transition()
                    .is_some_and(|t| t.phase == Phase::DualResidence)
                {
                    self.engine
                        .schedule_after(1, Some(node), Event::Timer(Timer::Residence));
                }
            }
            Role::TimeDevice { .. } => {}
        }
    }

    fn dn_recover(&mut self, shard: ShardId) {
        let s = shard as usize;
        let node = self.dns[s].node;
        self.dns[s].parked.clear();
        self.dns[s].fetch_inflight = false;

        // Pending single-shard commits die with the crash: the finalize
        // acknowledgement was never sent (appends and replies are atomic in
        // a handler), so aborting unilaterally is safe and frees the keys.
        let staged = self.dns[s].store.staged_txns();
        for (txn, kind) in staged {
            if kind == LockKind::PendingCommit && !self.dns[s].decided.contains(&txn) {
                let dn = &mut self.dns[s];
                dn.store.release(txn);
                let at = self.engine.now().micros();
                dn.log
                    .append(RecordKind::Abort, txn, 0, at, Vec::new(), Vec::new());
                self.ship_last(s);
            }
        }

        // Re-ship whatever the replicas never acknowledged.
        let replicas: Vec<NodeId> = self.topo.replicas(shard).to_vec();
        for rep in replicas {
            let after = self.dns[s].acked_lsn.get(&rep).copied().unwrap_or(0);
            let records = self.dns[s].log.suffix(after).to_vec();
            if !records.is_empty() {
                self.post(node, rep, Msg::RedoShip { shard, records });
            }
        }

        self.engine.schedule_after(
            self.cfg.replication.heartbeat_interval_us,
            Some(node),
            Event::Timer(Timer::Heartbeat { shard }),
        );
        // The tick chases prepared transactions through their coordinators.
        self.engine
            .schedule_after(1, Some(node), Event::Timer(Timer::DnTick { shard }));
    }
}
