//! Scenario configuration: the TOML schema every run starts from.
//!
//! Unknown fields are rejected everywhere so a typo fails loudly instead of
//! silently running a different experiment. Node references in fault events
//! use the human names ("tserver", "cn0", "dn2", "rep1.0", "tdev1") and are
//! resolved against the topology during world construction.

use crate::authority::Direction;
use crate::error::SimError;
use crate::timestamp::Mode;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub topology: TopologyCfg,
    pub network: NetworkCfg,
    #[serde(default)]
    pub clocks: ClocksCfg,
    #[serde(default)]
    pub authority: AuthorityCfg,
    #[serde(default)]
    pub workload: WorkloadCfg,
    #[serde(default)]
    pub reads: ReadsCfg,
    #[serde(default)]
    pub replication: ReplicationCfg,
    #[serde(default)]
    pub transitions: Vec<TransitionCfg>,
    #[serde(default)]
    pub faults: Vec<FaultCfg>,
    #[serde(default)]
    pub mutations: MutationsCfg,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: ScenarioKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration_ms: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Closed- or open-loop client workload over the full cluster.
    Workload,
    /// The scripted two-transaction interleaving that demonstrates why
    /// counter-mode grants must hold during a switch.
    DualAnomaly,
    /// A scripted replication fixture: fixed commit points on two replicas,
    /// checking the published consistency point and what it makes visible.
    RcpPoint,
}

fn default_kind() -> ScenarioKind {
    ScenarioKind::Workload
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCfg {
    /// Region names; indices are region ids.
    pub regions: Vec<String>,
    /// One CN per entry, placed in the named region index.
    pub cn_regions: Vec<u16>,
    /// One shard per entry: the region of its primary.
    pub shard_primary_regions: Vec<u16>,
    /// Per shard, the regions of its replicas.
    pub replica_regions: Vec<Vec<u16>>,
    #[serde(default)]
    pub ts_server_region: u16,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCfg {
    /// Square matrix of one-way microseconds between regions.
    pub one_way_us: Vec<Vec<u64>>,
    #[serde(default)]
    pub jitter_fraction: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bps: u64,
    /// Extra one-way microseconds added to every link touching the
    /// timestamp authority, for centralized-cost sweeps.
    #[serde(default)]
    pub authority_extra_us: u64,
}

fn default_bandwidth() -> u64 {
    10_000_000_000
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClocksCfg {
    pub sync_interval_us: u64,
    pub sync_roundtrip_us: u64,
    pub drift_bound_ppm: u64,
    pub epoch_base_us: u64,
}

impl Default for ClocksCfg {
    fn default() -> Self {
        ClocksCfg {
            sync_interval_us: 1_000,
            sync_roundtrip_us: 60,
            drift_bound_ppm: 200,
            epoch_base_us: 1_600_000_000_000_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuthorityCfg {
    pub initial_mode: Mode,
    /// The dual-mode hold on counter grants; turning it off reproduces the
    /// switch anomaly.
    pub enable_dual_hold: bool,
}

impl Default for AuthorityCfg {
    fn default() -> Self {
        AuthorityCfg {
            initial_mode: Mode::Clock,
            enable_dual_hold: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ArrivalCfg {
    /// Each client runs one transaction at a time, thinking between them;
    /// throughput is then governed by latency.
    Closed { think_time_us: u64 },
    /// Poisson arrivals at a fixed rate per client, independent of latency.
    Open { rate_per_sec: f64 },
}

impl Default for ArrivalCfg {
    fn default() -> Self {
        ArrivalCfg::Closed { think_time_us: 0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadCfg {
    pub clients_per_cn: u32,
    pub arrival: ArrivalCfg,
    /// Fraction of transactions that are read-only.
    pub read_fraction: f64,
    /// Fraction of read-write transactions that touch two shards.
    pub multi_shard_fraction: f64,
    /// Fraction of transactions whose keys live on a remote-region shard.
    pub remote_fraction: f64,
    pub tables: u32,
    pub keys_per_table: u32,
    pub ops_per_txn: u32,
    /// Issue one schema-change transaction per interval (0 = never),
    /// cycling through tables.
    pub ddl_interval_ms: u64,
}

impl Default for WorkloadCfg {
    fn default() -> Self {
        WorkloadCfg {
            clients_per_cn: 4,
            arrival: ArrivalCfg::default(),
            read_fraction: 0.5,
            multi_shard_fraction: 0.1,
            remote_fraction: 0.1,
            tables: 3,
            keys_per_table: 100,
            ops_per_txn: 3,
            ddl_interval_ms: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteCfg {
    /// All reads at the shard primary.
    Primary,
    /// Read-only transactions pick a replica by the skyline rule when the
    /// consistency point and schema gate allow it.
    ReplicaAuto,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadsCfg {
    pub route: RouteCfg,
    /// Reject replicas staler than this; unset means any staleness.
    pub staleness_bound_us: Option<u64>,
    /// Per-session monotonic floor: a client never reads below a snapshot it
    /// has already observed.
    pub session_floor: bool,
}

impl Default for ReadsCfg {
    fn default() -> Self {
        ReadsCfg {
            route: RouteCfg::Primary,
            staleness_bound_us: None,
            session_floor: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicationCfg {
    pub heartbeat_interval_us: u64,
    pub rcp_interval_us: u64,
    /// A member silent for longer is flagged stale in publications.
    pub rcp_stale_after_us: u64,
    /// Extra apply delay injected at specific replicas, for staleness
    /// experiments.
    pub extra_lag: Vec<ReplicaLagCfg>,
}

impl Default for ReplicationCfg {
    fn default() -> Self {
        ReplicationCfg {
            heartbeat_interval_us: 500,
            rcp_interval_us: 1_000,
            rcp_stale_after_us: 5_000,
            extra_lag: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaLagCfg {
    pub replica: String,
    pub lag_us: u64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionCfg {
    pub at_us: u64,
    pub direction: Direction,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum FaultCfg {
    Crash {
        at_us: u64,
        node: String,
    },
    Recover {
        at_us: u64,
        node: String,
    },
    ClockDesync {
        at_us: u64,
        node: String,
        offset_us: i64,
        extra_drift_ppm: i64,
    },
    LinkDelay {
        at_us: u64,
        src: String,
        dst: String,
        delay_us: u64,
    },
    LinkDelayClear {
        at_us: u64,
        src: String,
        dst: String,
    },
}

impl FaultCfg {
    pub fn at_us(&self) -> u64 {
        match self {
            FaultCfg::Crash { at_us, .. }
            | FaultCfg::Recover { at_us, .. }
            | FaultCfg::ClockDesync { at_us, .. }
            | FaultCfg::LinkDelay { at_us, .. }
            | FaultCfg::LinkDelayClear { at_us, .. } => *at_us,
        }
    }
}

/// Soundness-breaking switches for negative-control experiments. Each one
/// removes a safeguard; checkers are expected to catch the fallout.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationsCfg {
    /// Skip the commit wait: timestamps become visible before the clock
    /// envelope guarantees them ordered.
    pub disable_commit_wait: bool,
    /// Let the published consistency point regress and skip floor seeding on
    /// collector takeover.
    pub disable_rcp_clamp: bool,
    /// Heartbeats claim the clock upper bound instead of what the log
    /// justifies, so freshness can overtake in-flight commits.
    pub heartbeat_upper_bound: bool,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig =
            toml::from_str(s).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let r = self.topology.regions.len();
        if r == 0 {
            return Err(SimError::config("at least one region is required"));
        }
        if self.topology.cn_regions.is_empty() {
            return Err(SimError::config("at least one CN is required"));
        }
        if self.topology.shard_primary_regions.is_empty() {
            return Err(SimError::config("at least one shard is required"));
        }
        if self.topology.replica_regions.len() != self.topology.shard_primary_regions.len() {
            return Err(SimError::config(
                "replica_regions must have one entry per shard",
            ));
        }
        for &reg in self
            .topology
            .cn_regions
            .iter()
            .chain(self.topology.shard_primary_regions.iter())
            .chain(self.topology.replica_regions.iter().flatten())
            .chain(std::iter::once(&self.topology.ts_server_region))
        {
            if reg as usize >= r {
                return Err(SimError::Config(format!(
                    "region index {reg} out of range ({r} regions)"
                )));
            }
        }
        if self.network.one_way_us.len() != r
            || self.network.one_way_us.iter().any(|row| row.len() != r)
        {
            return Err(SimError::config(
                "one_way_us must be a square matrix over the regions",
            ));
        }
        if !(0.0..1.0).contains(&self.network.jitter_fraction) {
            return Err(SimError::config("jitter_fraction must be in [0, 1)"));
        }
        if self.network.bandwidth_bps == 0 {
            return Err(SimError::config("bandwidth_bps must be positive"));
        }
        for (name, f) in [
            ("read_fraction", self.workload.read_fraction),
            ("multi_shard_fraction", self.workload.multi_shard_fraction),
            ("remote_fraction", self.workload.remote_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SimError::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.workload.tables == 0 || self.workload.keys_per_table == 0 {
            return Err(SimError::config("tables and keys_per_table must be positive"));
        }
        if self.workload.ops_per_txn == 0 {
            return Err(SimError::config("ops_per_txn must be positive"));
        }
        if let ArrivalCfg::Open { rate_per_sec } = self.workload.arrival {
            if !(rate_per_sec > 0.0) {
                return Err(SimError::config("open arrival rate must be positive"));
            }
        }
        if self.clocks.sync_interval_us == 0 {
            return Err(SimError::config("sync_interval_us must be positive"));
        }
        if self.replication.heartbeat_interval_us == 0 || self.replication.rcp_interval_us == 0 {
            return Err(SimError::config("replication intervals must be positive"));
        }
        if self.authority.initial_mode == Mode::Dual {
            return Err(SimError::config("initial mode must be counter or clock"));
        }
        if self.scenario.kind == ScenarioKind::DualAnomaly && self.topology.cn_regions.len() < 2 {
            return Err(SimError::config("the dual-anomaly script needs two CNs"));
        }
        if self.scenario.kind == ScenarioKind::RcpPoint
            && self.topology.replica_regions.first().map_or(0, |v| v.len()) < 2
        {
            return Err(SimError::config(
                "the rcp-point script needs two replicas on shard 0",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"
            [scenario]
            name = "t"
            duration_ms = 100

            [topology]
            regions = ["a", "b"]
            cn_regions = [0, 1]
            shard_primary_regions = [0]
            replica_regions = [[1]]

            [network]
            one_way_us = [[250, 30000], [30000, 250]]
        "#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(minimal()).unwrap();
        assert_eq!(cfg.scenario.seed, 1);
        assert_eq!(cfg.scenario.kind, ScenarioKind::Workload);
        assert_eq!(cfg.clocks.drift_bound_ppm, 200);
        assert_eq!(cfg.clocks.sync_roundtrip_us, 60);
        assert_eq!(cfg.authority.initial_mode, Mode::Clock);
        assert!(cfg.authority.enable_dual_hold);
        assert!(!cfg.mutations.disable_commit_wait);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let s = format!("{}\n[scenario2]\nx = 1\n", minimal());
        assert!(ScenarioConfig::from_toml_str(&s).is_err());
        let s = minimal().replace("duration_ms = 100", "duration_ms = 100\ntypo_field = 3");
        assert!(ScenarioConfig::from_toml_str(&s).is_err());
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let bad_matrix = minimal().replace(
            "one_way_us = [[250, 30000], [30000, 250]]",
            "one_way_us = [[250, 30000]]",
        );
        assert!(ScenarioConfig::from_toml_str(&bad_matrix).is_err());

        let bad_region = minimal().replace("cn_regions = [0, 1]", "cn_regions = [0, 7]");
        assert!(ScenarioConfig::from_toml_str(&bad_region).is_err());

        let bad_replicas = minimal().replace("replica_regions = [[1]]", "replica_regions = []");
        assert!(ScenarioConfig::from_toml_str(&bad_replicas).is_err());
    }

    #[test]
    fn fault_and_transition_sections_parse() {
        let s = format!(
            "{}\n{}",
            minimal(),
            r#"
            [[transitions]]
            at_us = 500000
            direction = "clock_to_counter"

            [[faults]]
            kind = "crash"
            at_us = 100000
            node = "rep0.0"

            [[faults]]
            kind = "clock_desync"
            at_us = 200000
            node = "cn1"
            offset_us = 5000
            extra_drift_ppm = 800

            [[faults]]
            kind = "link_delay"
            at_us = 300000
            src = "dn0"
            dst = "rep0.0"
            delay_us = 90000

            [mutations]
            disable_commit_wait = true
        "#
        );
        let cfg = ScenarioConfig::from_toml_str(&s).unwrap();
        assert_eq!(cfg.transitions.len(), 1);
        assert_eq!(cfg.faults.len(), 3);
        assert_eq!(cfg.faults[0].at_us(), 100_000);
        assert!(cfg.mutations.disable_commit_wait);
        assert!(matches!(
            cfg.transitions[0].direction,
            Direction::ClockToCounter
        ));
    }

    #[test]
    fn arrival_models_parse() {
        let closed = minimal().to_string()
            + "\n[workload]\narrival = { kind = \"closed\", think_time_us = 100 }\n";
        let cfg = ScenarioConfig::from_toml_str(&closed).unwrap();
        assert!(matches!(
            cfg.workload.arrival,
            ArrivalCfg::Closed { think_time_us: 100 }
        ));
        let open =
            minimal().to_string() + "\n[workload]\narrival = { kind = \"open\", rate_per_sec = 50.0 }\n";
        let cfg = ScenarioConfig::from_toml_str(&open).unwrap();
        assert!(matches!(cfg.workload.arrival, ArrivalCfg::Open { .. }));
    }
}
