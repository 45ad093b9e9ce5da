//! Synthetic transaction plans: keyspace construction, shard-aware key
//! draws, and arrival-gap sampling.
//!
//! Keys are named `t{table}.k{n}` and placed on shards by hashing, the same
//! function the coordinator uses, so the generator can steer transactions
//! toward shards that are local or remote to the submitting CN's region.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::coordinator::TxnPlan;
use crate::config::WorkloadCfg;
use crate::store::Key;
use crate::util;

pub struct WorkloadGen {
    cfg: WorkloadCfg,
    /// Keys grouped by owning shard; empty buckets are skipped when drawing.
    keys_by_shard: Vec<Vec<Key>>,
    /// Shards whose primary lives in a given region.
    primary_region: Vec<u16>,
    next_ddl_table: u32,
}

impl WorkloadGen {
    pub fn new(cfg: WorkloadCfg, shards: u32, primary_regions: Vec<u16>) -> Self {
        let mut keys_by_shard: Vec<Vec<Key>> = vec![Vec::new(); shards as usize];
        for t in 0..cfg.tables {
            for n in 0..cfg.keys_per_table {
                let key = format!("t{t}.k{n}");
                let shard = util::shard_of_key(&key, shards);
                keys_by_shard[shard as usize].push(key);
            }
        }
        WorkloadGen {
            cfg,
            keys_by_shard,
            primary_region: primary_regions,
            next_ddl_table: 0,
        }
    }

    /// Shards with at least one key whose locality relative to `region`
    /// matches `remote`; falls back to every populated shard.
    fn shard_pool(&self, region: u16, remote: bool) -> Vec<u32> {
        let populated = |s: &u32| !self.keys_by_shard[*s as usize].is_empty();
        let pool: Vec<u32> = (0..self.keys_by_shard.len() as u32)
            .filter(|s| (self.primary_region[*s as usize] != region) == remote)
            .filter(populated)
            .collect();
        if pool.is_empty() {
            (0..self.keys_by_shard.len() as u32)
                .filter(populated)
                .collect()
        } else {
            pool
        }
    }

    fn draw_from(&self, shard: u32, rng: &mut ChaCha8Rng) -> Key {
        let bucket = &self.keys_by_shard[shard as usize];
        bucket[rng.gen_range(0..bucket.len())].clone()
    }

    /// One transaction plan. Writes read their own keys first, so every
    /// update is a read-modify-write and histories carry read evidence for
    /// the write set. Write values are placeholders; the world stamps them
    /// with the transaction id.
    pub fn plan(&self, client: u32, region: u16, rng: &mut ChaCha8Rng) -> TxnPlan {
        let read_only = rng.gen_bool(self.cfg.read_fraction);
        let remote = rng.gen_bool(self.cfg.remote_fraction);
        let multi = !read_only && rng.gen_bool(self.cfg.multi_shard_fraction);
        let pool = self.shard_pool(region, remote);
        let ops = self.cfg.ops_per_txn.max(1) as usize;

        let mut keys = BTreeSet::new();
        if multi && pool.len() >= 2 {
            // Force at least two distinct shards into the write set.
            let a = pool[rng.gen_range(0..pool.len())];
            let b = loop {
                let c = pool[rng.gen_range(0..pool.len())];
                if c != a {
                    break c;
                }
            };
            keys.insert(self.draw_from(a, rng));
            while keys.len() < 2.min(ops) {
                keys.insert(self.draw_from(b, rng));
            }
            let mut attempts = 0;
            while keys.len() < ops && attempts < ops * 8 {
                let s = pool[rng.gen_range(0..pool.len())];
                keys.insert(self.draw_from(s, rng));
                attempts += 1;
            }
        } else {
            let s = pool[rng.gen_range(0..pool.len())];
            let mut attempts = 0;
            while keys.len() < ops && attempts < ops * 8 {
                keys.insert(self.draw_from(s, rng));
                attempts += 1;
            }
        }

        let reads: Vec<Key> = keys.iter().cloned().collect();
        let writes: Vec<(Key, u64)> = if read_only {
            Vec::new()
        } else {
            keys.iter().cloned().map(|k| (k, 0)).collect()
        };
        TxnPlan {
            client,
            read_only,
            ddl_table: None,
            reads,
            writes,
            floor: 0,
        }
    }

    /// A schema-change transaction against the next table in rotation. It
    /// carries no row writes; it exists to move the table's change timestamp
    /// through two-phase commit on every shard.
    pub fn ddl_plan(&mut self, client: u32) -> TxnPlan {
        let table = self.next_ddl_table;
        self.next_ddl_table = (self.next_ddl_table + 1) % self.cfg.tables.max(1);
        TxnPlan {
            client,
            read_only: false,
            ddl_table: Some(table),
            reads: Vec::new(),
            writes: Vec::new(),
            floor: 0,
        }
    }
}

/// Exponential inter-arrival gap for an open (Poisson) arrival process, in
/// microseconds, never zero.
pub fn poisson_gap_us(rate_per_sec: f64, rng: &mut ChaCha8Rng) -> u64 {
    let u: f64 = rng.gen_range(0.0f64..1.0);
    let gap = -(1.0 - u).ln() / rate_per_sec * 1_000_000.0;
    (gap as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg() -> WorkloadCfg {
        WorkloadCfg {
            clients_per_cn: 1,
            arrival: crate::config::ArrivalCfg::Closed { think_time_us: 0 },
            read_fraction: 0.5,
            multi_shard_fraction: 0.3,
            remote_fraction: 0.2,
            tables: 2,
            keys_per_table: 50,
            ops_per_txn: 3,
            ddl_interval_ms: 0,
        }
    }

    #[test]
    fn plans_are_well_formed() {
        let gen = WorkloadGen::new(cfg(), 3, vec![0, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = gen.plan(0, 0, &mut rng);
            assert!(!p.reads.is_empty());
            if p.read_only {
                assert!(p.writes.is_empty());
            } else {
                // Read-modify-write: the read set covers the write set.
                for (k, _) in &p.writes {
                    assert!(p.reads.contains(k));
                }
            }
            for k in &p.reads {
                assert!(k.starts_with('t') && k.contains(".k"));
            }
        }
    }

    #[test]
    fn multi_shard_writes_span_shards() {
        let gen = WorkloadGen::new(
            WorkloadCfg {
                multi_shard_fraction: 1.0,
                read_fraction: 0.0,
                ..cfg()
            },
            4,
            vec![0, 0, 0, 0],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spanning = 0;
        for _ in 0..50 {
            let p = gen.plan(0, 0, &mut rng);
            let shards: BTreeSet<u32> = p
                .writes
                .iter()
                .map(|(k, _)| util::shard_of_key(k, 4))
                .collect();
            if shards.len() >= 2 {
                spanning += 1;
            }
        }
        assert_eq!(spanning, 50);
    }

    #[test]
    fn ddl_plans_rotate_tables() {
        let mut gen = WorkloadGen::new(cfg(), 1, vec![0]);
        let a = gen.ddl_plan(0).ddl_table.unwrap();
        let b = gen.ddl_plan(0).ddl_table.unwrap();
        let c = gen.ddl_plan(0).ddl_table.unwrap();
        assert_eq!((a, b, c), (0, 1, 0));
    }

    #[test]
    fn poisson_gaps_hit_the_requested_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let total: u64 = (0..n).map(|_| poisson_gap_us(1000.0, &mut rng)).sum();
        let mean = total as f64 / n as f64;
        // Rate 1000/s means a 1000 us mean gap.
        assert!((mean - 1000.0).abs() < 50.0, "mean {mean}");
    }
}
