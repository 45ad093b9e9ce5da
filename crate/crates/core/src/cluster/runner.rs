//! Scenario execution: build a world, drive it to the configured horizon,
//! and assemble the run output.
//!
//! Three drivers exist. The workload driver runs an arrival process per
//! client (closed or open loop) plus an optional periodic schema change. The
//! other two run fixed scripts: a probe interleaving around a
//! counter-to-clock switch, and a replication fixture that freezes the
//! consistency point with a replica crash. Scripts only decide *when* to
//! submit *which* plan; everything else is the ordinary protocol machinery.

use crate::cluster::coordinator::TxnPlan;
use crate::cluster::history::History;
use crate::cluster::messages::{Event, Timer};
use crate::cluster::workload::{self, WorkloadGen};
use crate::cluster::world::{Metrics, World};
use crate::config::{ArrivalCfg, ScenarioConfig, ScenarioKind};
use crate::error::SimError;
use crate::replication::RedoRecord;
use crate::sim::engine::EngineStats;
use crate::sim::time::SimTime;
use std::collections::BTreeMap;

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub name: String,
    pub seed: u64,
    pub duration_us: u64,
    pub history: History,
    pub metrics: Metrics,
    pub stats: EngineStats,
    /// Clock readings that escaped their error envelope (should stay zero
    /// unless a desync fault was injected).
    pub envelope_violations: u64,
    /// Final primary redo log per shard, for log-replay audits.
    pub logs: BTreeMap<u32, Vec<RedoRecord>>,
    /// Which client submitted each transaction, for the session checks.
    pub client_of: BTreeMap<u64, u32>,
    pub trace: Vec<String>,
}

pub fn run_scenario(cfg: ScenarioConfig) -> Result<RunOutput, SimError> {
    run_scenario_traced(cfg, false)
}

pub fn run_scenario_traced(cfg: ScenarioConfig, trace: bool) -> Result<RunOutput, SimError> {
    let kind = cfg.scenario.kind;
    let end = SimTime::from_ms(cfg.scenario.duration_ms);
    let mut world = World::build(cfg)?;
    if trace {
        world.engine.enable_trace();
    }
    match kind {
        ScenarioKind::Workload => drive_workload(&mut world, end)?,
        ScenarioKind::DualAnomaly => drive_dual_anomaly(&mut world, end)?,
        ScenarioKind::RcpPoint => drive_rcp_point(&mut world, end)?,
    }
    let trace = world.engine.take_trace();
    let envelope_violations = world.clocks.envelope_violations();
    let logs: BTreeMap<u32, Vec<RedoRecord>> = world
        .dns
        .iter()
        .map(|dn| (dn.shard, dn.log.suffix(0).to_vec()))
        .collect();
    let World {
        cfg,
        history,
        metrics,
        engine,
        txn_client,
        ..
    } = world;
    Ok(RunOutput {
        name: cfg.scenario.name.clone(),
        seed: cfg.scenario.seed,
        duration_us: end.micros(),
        history,
        metrics,
        stats: engine.stats,
        envelope_violations,
        logs,
        client_of: txn_client,
        trace,
    })
}

/// Client arrival processes plus an optional schema-change drumbeat.
fn drive_workload(world: &mut World, end: SimTime) -> Result<(), SimError> {
    let wl = world.cfg.workload.clone();
    let arrival = wl.arrival.clone();
    let clients_per_cn = wl.clients_per_cn;
    let total_clients = world.cns.len() as u32 * clients_per_cn;
    let ddl_client = total_clients;
    let primary_regions: Vec<u16> = world
        .topo
        .primaries()
        .iter()
        .map(|p| world.topo.region(*p))
        .collect();
    let mut gen = WorkloadGen::new(wl.clone(), world.topo.shard_count as u32, primary_regions);

    // Stagger first arrivals so clients do not stampede tick zero.
    for c in 0..total_clients {
        let at = SimTime::from_ms(0).plus(1 + (c as u64 * 37) % 1009);
        world
            .engine
            .schedule_at(at, None, Event::Timer(Timer::Arrival { client: c }));
    }
    if wl.ddl_interval_ms > 0 {
        world
            .engine
            .schedule_after(wl.ddl_interval_ms * 1000, None, Event::Timer(Timer::DdlKick));
    }

    while let Some(f) = world.engine.pop_due(end) {
        if let Some(t) = world.handle(f.owner, f.event) {
            match t {
                Timer::Arrival { client } => {
                    let home = (client / clients_per_cn) as usize;
                    let target = if world.engine.is_alive(world.topo.cn(home)) {
                        Some(home)
                    } else {
                        world.lowest_alive_cn()
                    };
                    match target {
                        Some(i) => {
                            let region = world.topo.region(world.topo.cn(i));
                            let plan = gen.plan(client, region, &mut world.engine.rng);
                            world.start_txn(i, plan);
                        }
                        None if matches!(arrival, ArrivalCfg::Closed { .. }) => {
                            // Whole frontend down: retry this client slot later.
                            world.engine.schedule_after(
                                10_000,
                                None,
                                Event::Timer(Timer::Arrival { client }),
                            );
                        }
                        None => {}
                    }
                    if let ArrivalCfg::Open { rate_per_sec } = arrival {
                        let gap = workload::poisson_gap_us(rate_per_sec, &mut world.engine.rng);
                        world
                            .engine
                            .schedule_after(gap, None, Event::Timer(Timer::Arrival { client }));
                    }
                }
                Timer::DdlKick => {
                    if let Some(i) = world.lowest_alive_cn() {
                        let plan = gen.ddl_plan(ddl_client);
                        world.start_txn(i, plan);
                    }
                    world.engine.schedule_after(
                        wl.ddl_interval_ms * 1000,
                        None,
                        Event::Timer(Timer::DdlKick),
                    );
                }
                _ => {}
            }
        }
        // Closed loop: a finished transaction frees its client to think,
        // then submit again.
        if let ArrivalCfg::Closed { think_time_us } = arrival {
            let done: Vec<u32> = world.finished.drain(..).map(|d| d.client).collect();
            for client in done {
                if client < total_clients {
                    world.engine.schedule_after(
                        think_time_us.max(1),
                        None,
                        Event::Timer(Timer::Arrival { client }),
                    );
                }
            }
        } else {
            world.finished.clear();
        }
    }
    world.engine.finish_window(end);
    Ok(())
}

fn plan(client: u32, read_only: bool, reads: &[&str], writes: &[&str]) -> TxnPlan {
    TxnPlan {
        client,
        read_only,
        ddl_table: None,
        reads: reads.iter().map(|k| k.to_string()).collect(),
        writes: writes.iter().map(|k| (k.to_string(), 0)).collect(),
        floor: 0,
    }
}

/// The probe interleaving around a counter-to-clock switch.
///
/// One writer begins under the counter and, slowed by a link fault from the
/// config, acquires its commit timestamp mid-switch; a background
/// transaction at a third CN hands the authority a fresh clock reading just
/// before that grant; probe readers at a second CN begin immediately after
/// the switch completes. With the dual-mode safeguards disabled, a probe's
/// local snapshot can fall below the writer's raised grant and miss a commit
/// that was acknowledged before the probe began.
fn drive_dual_anomaly(world: &mut World, end: SimTime) -> Result<(), SimError> {
    if world.cns.len() < 3 {
        return Err(SimError::Config(
            "dual_anomaly needs at least three CNs".into(),
        ));
    }
    if world.cfg.transitions.is_empty() {
        return Err(SimError::Config(
            "dual_anomaly needs a scheduled transition".into(),
        ));
    }
    let kick = world.cfg.transitions[0].at_us;
    let steps: [(u64, usize); 6] = [
        (kick - 200, 0),  // writer begins under the counter
        (kick + 850, 1),  // background dual transaction at cn2
        (kick + 1160, 2), // probes at cn1, right after the unguarded switch
        (kick + 1190, 3),
        (kick + 1220, 4),
        (kick + 2200, 5), // late probe: the commit must be visible by now
    ];
    for (at, step) in steps {
        world.engine.schedule_at(
            SimTime::from_ms(0).plus(at),
            None,
            Event::Timer(Timer::Script { step }),
        );
    }
    while let Some(f) = world.engine.pop_due(end) {
        if let Some(Timer::Script { step }) = world.handle(f.owner, f.event) {
            match step {
                0 => {
                    world.start_txn(0, plan(100, false, &["t0.k3"], &["t0.k1"]));
                }
                1 => {
                    world.start_txn(2, plan(101, false, &[], &["t0.k2"]));
                }
                // Two keys keep the probes off the single-key fast path, so
                // they read at their acquired snapshot.
                2..=5 => {
                    world.start_txn(1, plan(100 + step as u32, true, &["t0.k1", "t0.k3"], &[]));
                }
                _ => {}
            }
        }
    }
    world.engine.finish_window(end);
    Ok(())
}

/// The replication fixture: five spaced writes while replica crashes from
/// the config freeze two members' applied prefixes at different points, then
/// a routed read of every key. The published consistency point is the
/// minimum applied commit timestamp across the three replicas, so the read
/// observes exactly the prefix the most-behind member had applied.
fn drive_rcp_point(world: &mut World, end: SimTime) -> Result<(), SimError> {
    if world.cns.is_empty() {
        return Err(SimError::Config("rcp_point needs a CN".into()));
    }
    if world.topo.replicas_per_shard < 3 {
        return Err(SimError::Config(
            "rcp_point needs three replicas per shard".into(),
        ));
    }
    for step in 0..6usize {
        let at = if step < 5 {
            SimTime::from_ms(100 + 150 * step as u64)
        } else {
            SimTime::from_ms(1000)
        };
        world
            .engine
            .schedule_at(at, None, Event::Timer(Timer::Script { step }));
    }
    while let Some(f) = world.engine.pop_due(end) {
        if let Some(Timer::Script { step }) = world.handle(f.owner, f.event) {
            match step {
                0..=4 => {
                    let key = format!("t0.k{}", step + 1);
                    let mut p = plan(200, false, &[], &[]);
                    p.writes = vec![(key, 0)];
                    world.start_txn(0, p);
                }
                5 => {
                    world.start_txn(
                        0,
                        plan(
                            201,
                            true,
                            &["t0.k1", "t0.k2", "t0.k3", "t0.k4", "t0.k5"],
                            &[],
                        ),
                    );
                }
                _ => {}
            }
        }
    }
    world.engine.finish_window(end);
    Ok(())
}
