//! Redo log records, their wire format, and replica replay.
//!
//! Each shard's primary appends a record per state change and ships it to the
//! replicas of that shard immediately. A replica applies records strictly in
//! log order, so at any applied prefix the replica equals the state the
//! primary had at that log position. Pending-commit records are appended
//! *before* the commit timestamp is requested and commit records only after
//! the commit wait, which is what makes a replica prefix safe to read at a
//! snapshot: every transaction that could commit at or below the replica's
//! freshness point is already visible in the prefix, either as an installed
//! version or as an unresolved lock the read will block on.
//!
//! The encoding is little-endian and length-prefixed so resume after a crash
//! can reread from any record boundary. The layout is frozen by a golden test
//! below; changing it is a format break.

use crate::error::SimError;
use crate::store::{Key, LockKind, ShardStore};

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    PendingCommit = 0,
    Commit = 1,
    Prepare = 2,
    CommitPrepared = 3,
    Abort = 4,
    AbortPrepared = 5,
    Ddl = 6,
    Heartbeat = 7,
}

impl RecordKind {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => RecordKind::PendingCommit,
            1 => RecordKind::Commit,
            2 => RecordKind::Prepare,
            3 => RecordKind::CommitPrepared,
            4 => RecordKind::Abort,
            5 => RecordKind::AbortPrepared,
            6 => RecordKind::Ddl,
            7 => RecordKind::Heartbeat,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedoRecord {
    pub lsn: u64,
    pub kind: RecordKind,
    pub txn: u64,
    /// Commit timestamp for commit kinds, freshness value for heartbeats,
    /// zero otherwise.
    pub ts: u64,
    /// Simulation time the record was appended at the primary; replicas use
    /// it only for diagnostics (true staleness of a served read).
    pub appended_at: u64,
    pub keys: Vec<Key>,
    /// Kind-specific extension: write payloads (u64 per key) for
    /// pending-commit and prepare, the table id (u32) for schema changes.
    pub payload: Vec<u8>,
}

impl RedoRecord {
    pub fn writes(&self) -> Vec<(Key, u64)> {
        self.keys
            .iter()
            .zip(self.payload.chunks_exact(8))
            .map(|(k, c)| (k.clone(), u64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    }

    pub fn ddl_table(&self) -> Option<u32> {
        let c: [u8; 4] = self.payload.get(..4)?.try_into().ok()?;
        Some(u32::from_le_bytes(c))
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        let body_start = out.len() + 4;
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&self.lsn.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.txn.to_le_bytes());
        out.extend_from_slice(&self.ts.to_le_bytes());
        out.extend_from_slice(&self.appended_at.to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u32).to_le_bytes());
        for k in &self.keys {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let body_len = (out.len() - body_start) as u32;
        out[body_start - 4..body_start].copy_from_slice(&body_len.to_le_bytes());
    }

    pub fn encoded_len(&self) -> usize {
        let mut n = 4 + 8 + 1 + 8 + 8 + 8 + 4;
        for k in &self.keys {
            n += 4 + k.len();
        }
        n + 4 + self.payload.len()
    }

    /// Decode one record from the front of `buf`, returning it and the bytes
    /// consumed.
    pub fn decode(buf: &[u8]) -> Result<(RedoRecord, usize), SimError> {
        let err = |m: &str| SimError::RedoDecode(m.to_string());
        let take = |b: &[u8], at: usize, n: usize| -> Result<Vec<u8>, SimError> {
            b.get(at..at + n)
                .map(|s| s.to_vec())
                .ok_or_else(|| err("truncated record"))
        };
        let u32_at = |b: &[u8], at: usize| -> Result<u32, SimError> {
            Ok(u32::from_le_bytes(take(b, at, 4)?.try_into().unwrap()))
        };
        let u64_at = |b: &[u8], at: usize| -> Result<u64, SimError> {
            Ok(u64::from_le_bytes(take(b, at, 8)?.try_into().unwrap()))
        };

        let body_len = u32_at(buf, 0)? as usize;
        let total = 4 + body_len;
        if buf.len() < total {
            return Err(err("truncated record"));
        }
        let mut at = 4;
        let lsn = u64_at(buf, at)?;
        at += 8;
        let kind = RecordKind::from_u8(buf[at]).ok_or_else(|| err("unknown record kind"))?;
        at += 1;
        let txn = u64_at(buf, at)?;
        at += 8;
        let ts = u64_at(buf, at)?;
        at += 8;
        let appended_at = u64_at(buf, at)?;
        at += 8;
        let key_count = u32_at(buf, at)? as usize;
        at += 4;
        let mut keys = Vec::with_capacity(key_count.min(1024));
        for _ in 0..key_count {
            let klen = u32_at(buf, at)? as usize;
            at += 4;
            let kb = take(buf, at, klen)?;
            at += klen;
            keys.push(String::from_utf8(kb).map_err(|_| err("key is not utf-8"))?);
        }
        let plen = u32_at(buf, at)? as usize;
        at += 4;
        let payload = take(buf, at, plen)?;
        at += plen;
        if at != total {
            return Err(err("record length mismatch"));
        }
        Ok((
            RedoRecord {
                lsn,
                kind,
                txn,
                ts,
                appended_at,
                keys,
                payload,
            },
            total,
        ))
    }
}

pub fn encode_writes_payload(writes: &[(Key, u64)]) -> Vec<u8> {
    let mut p = Vec::with_capacity(writes.len() * 8);
    for (_, d) in writes {
        p.extend_from_slice(&d.to_le_bytes());
    }
    p
}

/// The primary's append-only log for one shard. Records are retained so a
/// recovering replica can pull any suffix.
pub struct PrimaryLog {
    records: Vec<RedoRecord>,
    next_lsn: u64,
}

impl Default for PrimaryLog {
    fn default() -> Self {
        Self::new()
    }
}

impl PrimaryLog {
    pub fn new() -> Self {
        PrimaryLog {
            records: Vec::new(),
            next_lsn: 1,
        }
    }

    pub fn append(
        &mut self,
        kind: RecordKind,
        txn: u64,
        ts: u64,
        appended_at: u64,
        keys: Vec<Key>,
        payload: Vec<u8>,
    ) -> &RedoRecord {
        let rec = RedoRecord {
            lsn: self.next_lsn,
            kind,
            txn,
            ts,
            appended_at,
            keys,
            payload,
        };
        self.next_lsn += 1;
        self.records.push(rec);
        self.records.last().unwrap()
    }

    pub fn last_lsn(&self) -> u64 {
        self.next_lsn - 1
    }

    /// Records with lsn strictly greater than `after`.
    pub fn suffix(&self, after: u64) -> &[RedoRecord] {
        let start = (after as usize).min(self.records.len());
        &self.records[start..]
    }

    pub fn get(&self, lsn: u64) -> Option<&RedoRecord> {
        self.records.get(lsn.checked_sub(1)? as usize)
    }
}

/// A replica's applied state for one shard.
pub struct ReplicaApply {
    pub store: ShardStore,
    pub applied_lsn: u64,
    /// The largest commit timestamp this replica can serve consistently:
    /// max of applied commit timestamps and heartbeat promises. Everything at
    /// or below it is in the applied prefix, installed or locked.
    pub freshness_ts: u64,
}

impl Default for ReplicaApply {
    fn default() -> Self {
        Self::new()
    }
}

impl ReplicaApply {
    pub fn new() -> Self {
        ReplicaApply {
            store: ShardStore::new(),
            applied_lsn: 0,
            freshness_ts: 0,
        }
    }

    /// Apply the next record in sequence. Gaps are a protocol error; the
    /// resume handshake must deliver a contiguous suffix.
    pub fn apply(&mut self, rec: &RedoRecord) -> Result<(), SimError> {
        if rec.lsn != self.applied_lsn + 1 {
            return Err(SimError::RedoDecode(format!(
                "lsn gap: applied {} but next record is {}",
                self.applied_lsn, rec.lsn
            )));
        }
        match rec.kind {
            RecordKind::PendingCommit => {
                self.store
                    .stage_replicated(rec.txn, LockKind::PendingCommit, &rec.writes());
            }
            RecordKind::Prepare => {
                self.store
                    .stage_replicated(rec.txn, LockKind::Prepared, &rec.writes());
            }
            RecordKind::Commit | RecordKind::CommitPrepared => {
                self.store.install(rec.txn, rec.ts);
                self.freshness_ts = self.freshness_ts.max(rec.ts);
            }
            RecordKind::Abort | RecordKind::AbortPrepared => {
                self.store.release(rec.txn);
            }
            RecordKind::Ddl => {
                if let Some(table) = rec.ddl_table() {
                    self.store.apply_ddl(table, rec.ts);
                }
                self.freshness_ts = self.freshness_ts.max(rec.ts);
            }
            RecordKind::Heartbeat => {
                self.freshness_ts = self.freshness_ts.max(rec.ts);
            }
        }
        self.applied_lsn = rec.lsn;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ReadOutcome;

    fn pending(lsn: u64, txn: u64, writes: &[(&str, u64)]) -> RedoRecord {
        let writes: Vec<(Key, u64)> = writes.iter().map(|(k, d)| (k.to_string(), *d)).collect();
        RedoRecord {
            lsn,
            kind: RecordKind::PendingCommit,
            txn,
            ts: 0,
            appended_at: 0,
            keys: writes.iter().map(|(k, _)| k.clone()).collect(),
            payload: encode_writes_payload(&writes),
        }
    }

    fn commit(lsn: u64, txn: u64, ts: u64) -> RedoRecord {
        RedoRecord {
            lsn,
            kind: RecordKind::Commit,
            txn,
            ts,
            appended_at: 0,
            keys: vec![],
            payload: vec![],
        }
    }

    #[test]
    fn golden_encoding_is_stable() {
        let rec = pending(3, 9, &[("ab", 0x0102)]);
        let mut buf = Vec::new();
        rec.encode(&mut buf);
        let expect: Vec<u8> = vec![
            55, 0, 0, 0, // body length
            3, 0, 0, 0, 0, 0, 0, 0, // lsn
            0, // kind: pending-commit
            9, 0, 0, 0, 0, 0, 0, 0, // txn
            0, 0, 0, 0, 0, 0, 0, 0, // ts
            0, 0, 0, 0, 0, 0, 0, 0, // appended at
            1, 0, 0, 0, // key count
            2, 0, 0, 0, b'a', b'b', // key "ab"
            8, 0, 0, 0, // payload length
            0x02, 0x01, 0, 0, 0, 0, 0, 0, // payload: one u64 write value
        ];
        assert_eq!(buf, expect);
        assert_eq!(buf.len(), rec.encoded_len());
    }

    #[test]
    fn roundtrip_every_kind() {
        let samples = vec![
            pending(1, 5, &[("t0.k1", 7), ("t0.k2", 8)]),
            commit(2, 5, 12345),
            RedoRecord {
                lsn: 3,
                kind: RecordKind::Prepare,
                txn: 6,
                ts: 0,
                appended_at: 11,
                keys: vec!["x".into()],
                payload: encode_writes_payload(&[("x".into(), 1)]),
            },
            RedoRecord {
                lsn: 4,
                kind: RecordKind::CommitPrepared,
                txn: 6,
                ts: 999,
                appended_at: 12,
                keys: vec![],
                payload: vec![],
            },
            RedoRecord {
                lsn: 5,
                kind: RecordKind::Abort,
                txn: 7,
                ts: 0,
                appended_at: 13,
                keys: vec![],
                payload: vec![],
            },
            RedoRecord {
                lsn: 6,
                kind: RecordKind::AbortPrepared,
                txn: 8,
                ts: 0,
                appended_at: 14,
                keys: vec![],
                payload: vec![],
            },
            RedoRecord {
                lsn: 7,
                kind: RecordKind::Ddl,
                txn: 9,
                ts: 500,
                appended_at: 15,
                keys: vec![],
                payload: 3u32.to_le_bytes().to_vec(),
            },
            RedoRecord {
                lsn: 8,
                kind: RecordKind::Heartbeat,
                txn: 0,
                ts: 800,
                appended_at: 16,
                keys: vec![],
                payload: vec![],
            },
        ];
        let mut buf = Vec::new();
        for r in &samples {
            r.encode(&mut buf);
        }
        let mut at = 0;
        for want in &samples {
            let (got, n) = RedoRecord::decode(&buf[at..]).unwrap();
            assert_eq!(&got, want);
            at += n;
        }
        assert_eq!(at, buf.len());
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(RedoRecord::decode(&[1, 2]).is_err());
        // A record with an unknown kind byte.
        let mut buf = Vec::new();
        commit(1, 1, 1).encode(&mut buf);
        buf[12] = 42;
        assert!(RedoRecord::decode(&buf).is_err());
        // Truncated body.
        let mut buf = Vec::new();
        pending(1, 1, &[("k", 1)]).encode(&mut buf);
        assert!(RedoRecord::decode(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn log_append_assigns_contiguous_lsns_and_serves_suffixes() {
        let mut log = PrimaryLog::new();
        log.append(RecordKind::Heartbeat, 0, 10, 1, vec![], vec![]);
        log.append(RecordKind::Heartbeat, 0, 20, 2, vec![], vec![]);
        log.append(RecordKind::Heartbeat, 0, 30, 3, vec![], vec![]);
        assert_eq!(log.last_lsn(), 3);
        let s = log.suffix(1);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].lsn, 2);
        assert_eq!(log.get(3).unwrap().ts, 30);
        assert!(log.get(4).is_none());
        assert!(log.suffix(99).is_empty());
    }

    #[test]
    fn replica_replay_matches_primary_semantics() {
        let mut r = ReplicaApply::new();
        r.apply(&pending(1, 5, &[("k", 42)])).unwrap();
        // Lock visible: reads at any snapshot block.
        assert!(matches!(
            r.store.read("k", 1_000_000),
            ReadOutcome::Blocked { on_txn: 5 }
        ));
        r.apply(&commit(2, 5, 700)).unwrap();
        assert_eq!(r.freshness_ts, 700);
        assert!(matches!(r.store.read("k", 700), ReadOutcome::Ready(Some(_))));
        assert!(matches!(r.store.read("k", 699), ReadOutcome::Ready(None)));

        // Heartbeats advance freshness without data.
        r.apply(&RedoRecord {
            lsn: 3,
            kind: RecordKind::Heartbeat,
            txn: 0,
            ts: 900,
            appended_at: 0,
            keys: vec![],
            payload: vec![],
        })
        .unwrap();
        assert_eq!(r.freshness_ts, 900);

        // Aborts clear replicated locks.
        r.apply(&pending(4, 6, &[("k", 1)])).unwrap();
        r.apply(&RedoRecord {
            lsn: 5,
            kind: RecordKind::Abort,
            txn: 6,
            ts: 0,
            appended_at: 0,
            keys: vec![],
            payload: vec![],
        })
        .unwrap();
        assert!(matches!(r.store.read("k", 900), ReadOutcome::Ready(Some(_))));
    }

    #[test]
    fn replica_rejects_lsn_gaps() {
        let mut r = ReplicaApply::new();
        r.apply(&commit(1, 1, 10)).unwrap();
        let e = r.apply(&commit(3, 2, 20));
        assert!(e.is_err());
        assert_eq!(r.applied_lsn, 1);
    }
}
