use crate::error::SimError;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

pub type ShardId = u32;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Role {
    /// Centralized timestamp server; also orchestrates mode transitions.
    TsServer,
    /// Per-region reference clock the drifting node clocks sync against.
    TimeDevice { region: u16 },
    /// Coordinator node: runs transactions, routes reads, collects metrics.
    Cn { idx: u32 },
    /// Primary data node owning one shard.
    Primary { shard: ShardId },
    /// Read replica of one shard.
    Replica { shard: ShardId, idx: u32 },
}

#[derive(Clone, Debug)]
pub struct NodeInfo {
    pub id: NodeId,
    pub role: Role,
    pub region: u16,
}

/// Static cluster layout. Node ids are assigned densely in a fixed order
/// (ts server, time devices, CNs, primaries, replicas) so runs are stable
/// under config-preserving edits.
#[derive(Clone, Debug)]
pub struct Topology {
    pub nodes: Vec<NodeInfo>,
    pub regions: usize,
    pub cn_count: usize,
    pub shard_count: usize,
    pub replicas_per_shard: usize,
    ts_server: NodeId,
    time_devices: Vec<NodeId>,
    cns: Vec<NodeId>,
    primaries: Vec<NodeId>,
    replicas: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn build(
        regions: usize,
        cn_regions: &[u16],
        shard_primary_regions: &[u16],
        replica_regions: &[Vec<u16>],
        ts_server_region: u16,
    ) -> Result<Topology, SimError> {
        if regions == 0 {
            return Err(SimError::config("at least one region required"));
        }
        let bad_region = |r: u16| r as usize >= regions;
        if cn_regions.is_empty() || shard_primary_regions.is_empty() {
            return Err(SimError::config("need at least one CN and one shard"));
        }
        if cn_regions.iter().copied().any(bad_region)
            || shard_primary_regions.iter().copied().any(bad_region)
            || replica_regions.iter().flatten().copied().any(bad_region)
            || bad_region(ts_server_region)
        {
            return Err(SimError::config("region index out of range"));
        }
        if replica_regions.len() != shard_primary_regions.len() {
            return Err(SimError::config(
                "replica placement must list every shard exactly once",
            ));
        }
        let per_shard = replica_regions.first().map(Vec::len).unwrap_or(0);
        if replica_regions.iter().any(|v| v.len() != per_shard) {
            return Err(SimError::config(
                "all shards must have the same replica count",
            ));
        }

        let mut nodes = Vec::new();
        let mut next = 0u32;
        let mut push = |role: Role, region: u16, nodes: &mut Vec<NodeInfo>| {
            let id = NodeId(next);
            next += 1;
            nodes.push(NodeInfo { id, role, region });
            id
        };

        let ts_server = push(Role::TsServer, ts_server_region, &mut nodes);
        let time_devices: Vec<NodeId> = (0..regions)
            .map(|r| push(Role::TimeDevice { region: r as u16 }, r as u16, &mut nodes))
            .collect();
        let cns: Vec<NodeId> = cn_regions
            .iter()
            .enumerate()
            .map(|(i, &r)| push(Role::Cn { idx: i as u32 }, r, &mut nodes))
            .collect();
        let primaries: Vec<NodeId> = shard_primary_regions
            .iter()
            .enumerate()
            .map(|(s, &r)| push(Role::Primary { shard: s as u32 }, r, &mut nodes))
            .collect();
        let replicas: Vec<Vec<NodeId>> = replica_regions
            .iter()
            .enumerate()
            .map(|(s, regs)| {
                regs.iter()
                    .enumerate()
                    .map(|(i, &r)| {
                        push(
                            Role::Replica {
                                shard: s as u32,
                                idx: i as u32,
                            },
                            r,
                            &mut nodes,
                        )
                    })
                    .collect()
            })
            .collect();

        Ok(Topology {
            nodes,
            regions,
            cn_count: cn_regions.len(),
            shard_count: shard_primary_regions.len(),
            replicas_per_shard: per_shard,
            ts_server,
            time_devices,
            cns,
            primaries,
            replicas,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn region(&self, n: NodeId) -> u16 {
        self.nodes[n.0 as usize].region
    }

    pub fn role(&self, n: NodeId) -> Role {
        self.nodes[n.0 as usize].role
    }

    pub fn ts_server(&self) -> NodeId {
        self.ts_server
    }

    pub fn time_device(&self, region: u16) -> NodeId {
        self.time_devices[region as usize]
    }

    pub fn cn(&self, idx: usize) -> NodeId {
        self.cns[idx]
    }

    pub fn cns(&self) -> &[NodeId] {
        &self.cns
    }

    pub fn primary(&self, shard: ShardId) -> NodeId {
        self.primaries[shard as usize]
    }

    pub fn primaries(&self) -> &[NodeId] {
        &self.primaries
    }

    pub fn replicas(&self, shard: ShardId) -> &[NodeId] {
        &self.replicas[shard as usize]
    }

    pub fn all_replicas(&self) -> impl Iterator<Item = (ShardId, u32, NodeId)> + '_ {
        self.replicas.iter().enumerate().flat_map(|(s, v)| {
            v.iter()
                .enumerate()
                .map(move |(i, &n)| (s as ShardId, i as u32, n))
        })
    }

    pub fn region_map(&self) -> Vec<u16> {
        self.nodes.iter().map(|n| n.region).collect()
    }

    /// Resolve a human-readable node name from scenario configs:
    /// "tserver", "tdev<R>", "cn<I>", "dn<S>", "rep<S>.<R>".
    pub fn resolve_name(&self, name: &str) -> Result<NodeId, SimError> {
        let err = || SimError::UnknownFaultTarget(name.to_string());
        if name == "tserver" {
            return Ok(self.ts_server);
        }
        if let Some(rest) = name.strip_prefix("tdev") {
            let r: usize = rest.parse().map_err(|_| err())?;
            return self.time_devices.get(r).copied().ok_or_else(err);
        }
        if let Some(rest) = name.strip_prefix("cn") {
            let i: usize = rest.parse().map_err(|_| err())?;
            return self.cns.get(i).copied().ok_or_else(err);
        }
        if let Some(rest) = name.strip_prefix("rep") {
            let (s, r) = rest.split_once('.').ok_or_else(err)?;
            let s: usize = s.parse().map_err(|_| err())?;
            let r: usize = r.parse().map_err(|_| err())?;
            return self
                .replicas
                .get(s)
                .and_then(|v| v.get(r))
                .copied()
                .ok_or_else(err);
        }
        if let Some(rest) = name.strip_prefix("dn") {
            let s: usize = rest.parse().map_err(|_| err())?;
            return self.primaries.get(s).copied().ok_or_else(err);
        }
        Err(err())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> Topology {
        Topology::build(
            3,
            &[0, 1, 2],
            &[0, 0, 1, 1, 2, 2],
            &[
                vec![1, 2],
                vec![1, 2],
                vec![0, 2],
                vec![0, 2],
                vec![0, 1],
                vec![0, 1],
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn id_assignment_is_dense_and_ordered() {
        let t = topo();
        // 1 tserver + 3 devices + 3 CNs + 6 primaries + 12 replicas
        assert_eq!(t.node_count(), 25);
        assert_eq!(t.ts_server(), NodeId(0));
        assert_eq!(t.time_device(2), NodeId(3));
        assert_eq!(t.cn(0), NodeId(4));
        assert_eq!(t.primary(0), NodeId(7));
        assert_eq!(t.replicas(5).len(), 2);
        assert_eq!(t.region(t.primary(2)), 1);
    }

    #[test]
    fn name_resolution() {
        let t = topo();
        assert_eq!(t.resolve_name("tserver").unwrap(), t.ts_server());
        assert_eq!(t.resolve_name("cn2").unwrap(), t.cn(2));
        assert_eq!(t.resolve_name("dn3").unwrap(), t.primary(3));
        assert_eq!(t.resolve_name("rep4.1").unwrap(), t.replicas(4)[1]);
        assert_eq!(t.resolve_name("tdev1").unwrap(), t.time_device(1));
        assert!(t.resolve_name("cn9").is_err());
        assert!(t.resolve_name("bogus").is_err());
    }

    #[test]
    fn rejects_bad_regions() {
        assert!(Topology::build(2, &[0, 5], &[0], &[vec![0]], 0).is_err());
        assert!(Topology::build(2, &[0], &[0], &[vec![0], vec![1]], 0).is_err());
    }
}
