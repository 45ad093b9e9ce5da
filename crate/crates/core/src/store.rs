//! Multi-version key store with commit-time locking.
//!
//! One `ShardStore` holds the versions for a single shard. The same structure
//! backs both the primary (which validates and decides) and the replicas
//! (which replay decisions from the redo stream); replicas simply skip the
//! validation entry points.
//!
//! Writes never install versions directly. A transaction first locks its keys
//! (pending-commit for the single-shard path, prepared for the two-phase
//! path), then a finalize/commit call installs all its versions at the commit
//! timestamp and releases the locks. Readers at a snapshot block on any
//! unresolved lock, because the locking transaction's commit timestamp is not
//! known yet and could land below the snapshot.

use std::collections::BTreeMap;

pub type Key = String;
pub type TxnId = u64;

/// One committed version of a key. Versions of a key are ordered by
/// (ts, writer) so that replaying the same commits in any order converges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Version {
    pub ts: u64,
    pub writer: TxnId,
    pub data: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LockKind {
    /// Single-shard commit in flight: timestamp being acquired.
    PendingCommit,
    /// Two-phase participant voted yes and awaits the decision.
    Prepared,
}

#[derive(Clone, Debug)]
pub struct Lock {
    pub txn: TxnId,
    pub kind: LockKind,
}

/// Why a lock or validation attempt failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoreConflict {
    /// Another transaction holds a lock on this key.
    Locked { key: Key, by: TxnId },
    /// A version committed after the transaction's snapshot.
    CommittedSinceSnapshot { key: Key, at: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadHit {
    pub ts: u64,
    pub writer: TxnId,
    pub data: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    Ready(Option<ReadHit>),
    /// An unresolved lock on the key; the read must wait for that
    /// transaction's outcome before the snapshot can be answered.
    Blocked { on_txn: TxnId },
}

#[derive(Default)]
pub struct ShardStore {
    versions: BTreeMap<Key, Vec<Version>>,
    locks: BTreeMap<Key, Lock>,
    /// Buffered writes of transactions that hold locks here.
    staged: BTreeMap<TxnId, Vec<(Key, u64)>>,
    max_committed_ts: u64,
    /// Per-table commit timestamp of the last schema change, plus the global
    /// max, maintained from the redo stream on replicas.
    ddl_ts: BTreeMap<u32, u64>,
    max_ddl_ts: u64,
}

impl ShardStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn max_committed_ts(&self) -> u64 {
        self.max_committed_ts
    }

    pub fn max_ddl_ts(&self) -> u64 {
        self.max_ddl_ts
    }

    pub fn ddl_ts_of(&self, table: u32) -> u64 {
        self.ddl_ts.get(&table).copied().unwrap_or(0)
    }

    pub fn apply_ddl(&mut self, table: u32, commit_ts: u64) {
        let e = self.ddl_ts.entry(table).or_insert(0);
        *e = (*e).max(commit_ts);
        self.max_ddl_ts = self.max_ddl_ts.max(commit_ts);
    }

    /// Snapshot read: the newest version with ts <= snapshot, unless an
    /// unresolved lock could still commit under it.
    pub fn read(&self, key: &str, snapshot: u64) -> ReadOutcome {
        if let Some(lock) = self.locks.get(key) {
            return ReadOutcome::Blocked { on_txn: lock.txn };
        }
        ReadOutcome::Ready(self.read_unblocked(key, snapshot))
    }

    /// The visibility rule alone, ignoring locks. Checkers and replay use
    /// this; live reads go through `read`.
    pub fn read_unblocked(&self, key: &str, snapshot: u64) -> Option<ReadHit> {
        let versions = self.versions.get(key)?;
        versions
            .iter()
            .rev()
            .find(|v| v.ts <= snapshot)
            .map(|v| ReadHit {
                ts: v.ts,
                writer: v.writer,
                data: v.data,
            })
    }

    pub fn lock_holder(&self, key: &str) -> Option<&Lock> {
        self.locks.get(key)
    }

    pub fn has_locks(&self, txn: TxnId) -> bool {
        self.staged.contains_key(&txn)
    }

    pub fn staged_writes(&self, txn: TxnId) -> Option<&[(Key, u64)]> {
        self.staged.get(&txn).map(|v| v.as_slice())
    }

    /// Lock kind a staged transaction holds. A staged transaction with an
    /// empty write set (schema changes) holds no key locks and reports as
    /// prepared, the only way such a transaction is staged.
    pub fn lock_kind_of(&self, txn: TxnId) -> Option<LockKind> {
        self.locks.values().find(|l| l.txn == txn).map(|l| l.kind)
    }

    /// Every transaction with staged writes, with its lock kind. Recovery
    /// walks this to decide what to abort and what to resolve.
    pub fn staged_txns(&self) -> Vec<(TxnId, LockKind)> {
        self.staged
            .keys()
            .map(|txn| (*txn, self.lock_kind_of(*txn).unwrap_or(LockKind::Prepared)))
            .collect()
    }

    fn lock_all(
        &mut self,
        txn: TxnId,
        kind: LockKind,
        writes: &[(Key, u64)],
    ) -> Result<(), StoreConflict> {
        for (key, _) in writes {
            if let Some(l) = self.locks.get(key) {
                if l.txn != txn {
                    return Err(StoreConflict::Locked {
                        key: key.clone(),
                        by: l.txn,
                    });
                }
            }
        }
        for (key, _) in writes {
            self.locks.insert(key.clone(), Lock { txn, kind });
        }
        self.staged.insert(txn, writes.to_vec());
        Ok(())
    }

    /// Single-shard path: take pending-commit locks on the write set before
    /// the commit timestamp is requested. Snapshot validation is deferred to
    /// `finalize`.
    pub fn pend_commit(&mut self, txn: TxnId, writes: &[(Key, u64)]) -> Result<(), StoreConflict> {
        self.lock_all(txn, LockKind::PendingCommit, writes)
    }

    /// Single-shard path: with the commit timestamp in hand, enforce
    /// first-committer-wins against the snapshot, then install.
    pub fn finalize(
        &mut self,
        txn: TxnId,
        snapshot: u64,
        commit_ts: u64,
    ) -> Result<Vec<(Key, u64)>, StoreConflict> {
        let writes = self.staged.get(&txn).cloned().unwrap_or_default();
        for (key, _) in &writes {
            if let Some(v) = self.versions.get(key).and_then(|vs| vs.last()) {
                if v.ts > snapshot {
                    let at = v.ts;
                    let key = key.clone();
                    self.release(txn);
                    return Err(StoreConflict::CommittedSinceSnapshot { key, at });
                }
            }
        }
        self.install(txn, commit_ts);
        Ok(writes)
    }

    /// Two-phase participant: validate against the snapshot and take prepared
    /// locks, or vote no.
    pub fn prepare(
        &mut self,
        txn: TxnId,
        snapshot: u64,
        writes: &[(Key, u64)],
    ) -> Result<(), StoreConflict> {
        for (key, _) in writes {
            if let Some(v) = self.versions.get(key).and_then(|vs| vs.last()) {
                if v.ts > snapshot {
                    return Err(StoreConflict::CommittedSinceSnapshot {
                        key: key.clone(),
                        at: v.ts,
                    });
                }
            }
        }
        self.lock_all(txn, LockKind::Prepared, writes)
    }

    /// Install a decided transaction's versions and drop its locks. Used by
    /// the primary on commit of a prepared transaction and by replicas when
    /// replaying any commit record.
    pub fn install(&mut self, txn: TxnId, commit_ts: u64) {
        let writes = self.staged.remove(&txn).unwrap_or_default();
        for (key, data) in writes {
            self.locks.remove(&key);
            let vs = self.versions.entry(key).or_default();
            vs.push(Version {
                ts: commit_ts,
                writer: txn,
                data,
            });
            vs.sort_by_key(|v| (v.ts, v.writer));
        }
        self.max_committed_ts = self.max_committed_ts.max(commit_ts);
    }

    /// Stage a replicated transaction's writes and mark its locks, mirroring
    /// what the primary did; used when replaying pending-commit and prepare
    /// records.
    pub fn stage_replicated(&mut self, txn: TxnId, kind: LockKind, writes: &[(Key, u64)]) {
        for (key, _) in writes {
            self.locks.insert(key.clone(), Lock { txn, kind });
        }
        self.staged.insert(txn, writes.to_vec());
    }

    /// Drop a transaction's locks and staged writes without installing.
    pub fn release(&mut self, txn: TxnId) {
        if let Some(writes) = self.staged.remove(&txn) {
            for (key, _) in writes {
                if self.locks.get(&key).is_some_and(|l| l.txn == txn) {
                    self.locks.remove(&key);
                }
            }
        }
    }

    /// All versions of a key in (ts, writer) order; checkers replay against
    /// this.
    pub fn versions_of(&self, key: &str) -> &[Version] {
        self.versions.get(key).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.versions.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(key: &str, data: u64) -> (Key, u64) {
        (key.to_string(), data)
    }

    #[test]
    fn snapshot_visibility_is_inclusive_and_takes_the_newest() {
        let mut s = ShardStore::new();
        s.stage_replicated(1, LockKind::PendingCommit, &[w("k", 10)]);
        s.install(1, 100);
        s.stage_replicated(2, LockKind::PendingCommit, &[w("k", 20)]);
        s.install(2, 200);

        assert_eq!(s.read("k", 99), ReadOutcome::Ready(None));
        let at100 = s.read("k", 100);
        assert!(matches!(at100, ReadOutcome::Ready(Some(ReadHit { ts: 100, writer: 1, data: 10 }))));
        let at300 = s.read("k", 300);
        assert!(matches!(at300, ReadOutcome::Ready(Some(ReadHit { ts: 200, writer: 2, data: 20 }))));
        assert_eq!(s.max_committed_ts(), 200);
    }

    #[test]
    fn reads_block_on_unresolved_locks_and_clear_after_decision() {
        let mut s = ShardStore::new();
        s.pend_commit(7, &[w("k", 1)]).unwrap();
        assert_eq!(s.read("k", 50), ReadOutcome::Blocked { on_txn: 7 });
        s.finalize(7, 0, 40).unwrap();
        let r = s.read("k", 50);
        assert!(matches!(r, ReadOutcome::Ready(Some(ReadHit { ts: 40, .. }))));
    }

    #[test]
    fn first_committer_wins_on_the_single_shard_path() {
        let mut s = ShardStore::new();
        // Two transactions snapshot at 10, both write k. The first to
        // finalize installs; the second fails validation.
        s.pend_commit(1, &[w("k", 1)]).unwrap();
        s.finalize(1, 10, 20).unwrap();
        s.pend_commit(2, &[w("k", 2)]).unwrap();
        let e = s.finalize(2, 10, 25).unwrap_err();
        assert_eq!(
            e,
            StoreConflict::CommittedSinceSnapshot {
                key: "k".into(),
                at: 20
            }
        );
        // The loser's locks are gone.
        assert!(s.lock_holder("k").is_none());
        assert!(matches!(s.read("k", 100), ReadOutcome::Ready(Some(ReadHit { writer: 1, .. }))));
    }

    #[test]
    fn concurrent_lockers_conflict_immediately() {
        let mut s = ShardStore::new();
        s.pend_commit(1, &[w("k", 1)]).unwrap();
        let e = s.pend_commit(2, &[w("k", 2)]).unwrap_err();
        assert_eq!(
            e,
            StoreConflict::Locked {
                key: "k".into(),
                by: 1
            }
        );
    }

    #[test]
    fn prepare_votes_no_when_a_version_committed_after_the_snapshot() {
        let mut s = ShardStore::new();
        s.stage_replicated(1, LockKind::PendingCommit, &[w("k", 1)]);
        s.install(1, 30);
        let e = s.prepare(2, 10, &[w("k", 2)]).unwrap_err();
        assert!(matches!(e, StoreConflict::CommittedSinceSnapshot { .. }));
        // Prepared state was not left behind.
        assert!(s.lock_holder("k").is_none());
    }

    #[test]
    fn prepare_then_commit_installs_at_the_decision_timestamp() {
        let mut s = ShardStore::new();
        s.prepare(3, 0, &[w("a", 5), w("b", 6)]).unwrap();
        assert_eq!(s.lock_holder("a").unwrap().kind, LockKind::Prepared);
        s.install(3, 77);
        assert!(matches!(s.read("a", 80), ReadOutcome::Ready(Some(ReadHit { ts: 77, data: 5, .. }))));
        assert!(matches!(s.read("b", 80), ReadOutcome::Ready(Some(ReadHit { ts: 77, data: 6, .. }))));
    }

    #[test]
    fn release_drops_locks_and_staged_writes() {
        let mut s = ShardStore::new();
        s.prepare(4, 0, &[w("a", 1)]).unwrap();
        s.release(4);
        assert!(s.lock_holder("a").is_none());
        assert_eq!(s.read("a", 100), ReadOutcome::Ready(None));
    }

    #[test]
    fn version_order_is_by_ts_then_writer() {
        let mut s = ShardStore::new();
        // Replay commits out of timestamp order; the store converges.
        s.stage_replicated(9, LockKind::PendingCommit, &[w("k", 90)]);
        s.install(9, 300);
        s.stage_replicated(8, LockKind::PendingCommit, &[w("k", 80)]);
        s.install(8, 100);
        let vs = s.versions_of("k");
        assert_eq!(vs.len(), 2);
        assert_eq!((vs[0].ts, vs[0].writer), (100, 8));
        assert_eq!((vs[1].ts, vs[1].writer), (300, 9));
    }

    #[test]
    fn ddl_tracking_keeps_per_table_and_global_maxima() {
        let mut s = ShardStore::new();
        s.apply_ddl(1, 500);
        s.apply_ddl(2, 300);
        assert_eq!(s.ddl_ts_of(1), 500);
        assert_eq!(s.ddl_ts_of(2), 300);
        assert_eq!(s.ddl_ts_of(3), 0);
        assert_eq!(s.max_ddl_ts(), 500);
    }
}
