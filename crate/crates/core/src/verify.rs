//! Offline history checkers.
//!
//! Each checker consumes only the structured run history, so an exported
//! JSONL history can be re-verified without the simulator. The checks:
//!
//! - **visibility**: a write whose commit was acknowledged to its client
//!   before a reader acquired its snapshot must be observed by that reader.
//!   Applies to primary-served reads; the fast path acquires its effective
//!   snapshot at serve time, so serve time is its acquisition point.
//!   Replica-served reads are exempt: they deliberately serve a slightly
//!   older consistent point, and the staleness audit bounds how old.
//! - **recency**: a reader that finished beginning before a writer acquired
//!   its commit timestamp must not observe that write.
//! - **snapshots**: every read returns exactly the newest committed version
//!   at or below its snapshot: nothing above the snapshot, nothing aborted,
//!   no committed version skipped, regardless of which node served it.
//! - **sessions**: once a client has observed a key's state, no later
//!   transaction of the same client (begun after the earlier one finished)
//!   observes an older state of that key.
//! - **consistency point**: published values never regress.
//! - **staleness**: replica-served reads come from nodes whose oracle-true
//!   replication lag is within the configured bound plus slack.

use std::collections::BTreeMap;

use crate::cluster::history::{AbortReason, History, HistoryEvent, ReadRoute};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub check: &'static str,
    pub txn: Option<u64>,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.txn {
            Some(t) => write!(f, "[{}] txn {}: {}", self.check, t, self.detail),
            None => write!(f, "[{}] {}", self.check, self.detail),
        }
    }
}

struct InvokeInfo {
    t: u64,
    acq_at: u64,
    rcp_snapshot: bool,
}

struct CommitInfo {
    visible_t: u64,
    acq_at: u64,
}

struct ReadInfo {
    txn: u64,
    t: u64,
    key: String,
    route: ReadRoute,
    snapshot: u64,
    observed_writer: Option<u64>,
    observed_ts: Option<u64>,
    served_at: u64,
    true_staleness_us: Option<u64>,
}

/// Everything the checkers need, extracted in one pass.
struct Index {
    invokes: BTreeMap<u64, InvokeInfo>,
    commits: BTreeMap<u64, CommitInfo>,
    aborted: BTreeMap<u64, AbortReason>,
    /// Committed versions per key, sorted by timestamp.
    by_key: BTreeMap<String, Vec<(u64, u64)>>,
    reads: Vec<ReadInfo>,
    publishes: Vec<(u64, u64)>,
}

impl Index {
    fn build(h: &History) -> Index {
        let mut ix = Index {
            invokes: BTreeMap::new(),
            commits: BTreeMap::new(),
            aborted: BTreeMap::new(),
            by_key: BTreeMap::new(),
            reads: Vec::new(),
            publishes: Vec::new(),
        };
        for ev in &h.events {
            match ev {
                HistoryEvent::Invoke {
                    txn,
                    t,
                    acq_at,
                    rcp_snapshot,
                    ..
                } => {
                    ix.invokes.insert(
                        *txn,
                        InvokeInfo {
                            t: *t,
                            acq_at: *acq_at,
                            rcp_snapshot: *rcp_snapshot,
                        },
                    );
                }
                HistoryEvent::CommitVisible {
                    txn,
                    t,
                    ts,
                    acq_at,
                    writes,
                    ..
                } => {
                    ix.commits.insert(
                        *txn,
                        CommitInfo {
                            visible_t: *t,
                            acq_at: *acq_at,
                        },
                    );
                    for k in writes {
                        ix.by_key.entry(k.clone()).or_default().push((*ts, *txn));
                    }
                }
                HistoryEvent::Abort { txn, reason, .. } => {
                    ix.aborted.insert(*txn, *reason);
                }
                HistoryEvent::ReadReturn {
                    txn,
                    t,
                    key,
                    route,
                    snapshot,
                    observed_writer,
                    observed_ts,
                    served_at,
                    true_staleness_us,
                    ..
                } => {
                    ix.reads.push(ReadInfo {
                        txn: *txn,
                        t: *t,
                        key: key.clone(),
                        route: *route,
                        snapshot: *snapshot,
                        observed_writer: *observed_writer,
                        observed_ts: *observed_ts,
                        served_at: *served_at,
                        true_staleness_us: *true_staleness_us,
                    });
                }
                HistoryEvent::RcpPublish { t, value, .. } => {
                    ix.publishes.push((*t, *value));
                }
                _ => {}
            }
        }
        for versions in ix.by_key.values_mut() {
            versions.sort();
        }
        ix
    }

    /// Snapshot-acquisition instant of a read: begin for snapshot-pinned
    /// reads, serve time for the fast path (it snapshots at the primary).
    fn acq_of(&self, r: &ReadInfo) -> Option<u64> {
        match r.route {
            ReadRoute::PrimaryBypass => Some(r.served_at),
            _ => self.invokes.get(&r.txn).map(|i| i.acq_at),
        }
    }

    /// When the reading transaction's snapshot was irrevocably fixed.
    fn begin_end_of(&self, r: &ReadInfo) -> Option<u64> {
        let begin = self.invokes.get(&r.txn).map(|i| i.t)?;
        Some(match r.route {
            ReadRoute::PrimaryBypass => begin.max(r.served_at),
            _ => begin,
        })
    }
}

/// A committed write acknowledged before a reader acquired its snapshot must
/// be observed. Reads served by replicas are exempt, as are all reads of a
/// transaction whose snapshot is the published consistency point: that
/// snapshot is deliberately stale, whichever node ends up serving each key.
pub fn check_visibility(h: &History) -> Vec<Violation> {
    let ix = Index::build(h);
    let mut out = Vec::new();
    for r in &ix.reads {
        if r.route == ReadRoute::Replica {
            continue;
        }
        if ix.invokes.get(&r.txn).is_some_and(|i| i.rcp_snapshot) {
            continue;
        }
        let Some(acq) = ix.acq_of(r) else { continue };
        let Some(versions) = ix.by_key.get(&r.key) else {
            continue;
        };
        // The newest version whose commit was client-visible before this
        // read's snapshot acquisition; seeing it or anything newer is fine.
        let required = versions
            .iter()
            .filter(|(_, w)| ix.commits[w].visible_t < acq)
            .map(|(ts, w)| (*ts, *w))
            .max();
        if let Some((req_ts, req_w)) = required {
            if r.observed_ts.unwrap_or(0) < req_ts {
                out.push(Violation {
                    check: "visibility",
                    txn: Some(r.txn),
                    detail: format!(
                        "read of {} (snapshot {}, acquired at {}) missed txn {} \
                         (ts {}) whose commit was visible at {}",
                        r.key, r.snapshot, acq, req_w, req_ts, ix.commits[&req_w].visible_t
                    ),
                });
            }
        }
    }
    out
}

/// A reader that finished beginning before a writer acquired its commit
/// timestamp must not observe that write.
pub fn check_recency(h: &History) -> Vec<Violation> {
    let ix = Index::build(h);
    let mut out = Vec::new();
    for r in &ix.reads {
        let Some(w) = r.observed_writer else { continue };
        let Some(c) = ix.commits.get(&w) else {
            continue;
        };
        let Some(begin_end) = ix.begin_end_of(r) else {
            continue;
        };
        if begin_end < c.acq_at {
            out.push(Violation {
                check: "recency",
                txn: Some(r.txn),
                detail: format!(
                    "read of {} observed txn {} whose commit timestamp was \
                     acquired at {}, after the reader's begin completed at {}",
                    r.key, w, c.acq_at, begin_end
                ),
            });
        }
    }
    out
}

/// Every read returns exactly the newest committed version at or below its
/// snapshot: nothing above it, nothing aborted, nothing skipped.
pub fn check_snapshots(h: &History) -> Vec<Violation> {
    let ix = Index::build(h);
    let mut out = Vec::new();
    for r in &ix.reads {
        if let Some(ts) = r.observed_ts {
            if ts > r.snapshot {
                out.push(Violation {
                    check: "snapshots",
                    txn: Some(r.txn),
                    detail: format!(
                        "read of {} observed ts {} above its snapshot {}",
                        r.key, ts, r.snapshot
                    ),
                });
            }
        }
        if let Some(w) = r.observed_writer {
            if let Some(reason) = ix.aborted.get(&w) {
                out.push(Violation {
                    check: "snapshots",
                    txn: Some(r.txn),
                    detail: format!(
                        "read of {} observed txn {} which aborted ({:?})",
                        r.key, w, reason
                    ),
                });
            }
        }
        // The newest committed version at or below the snapshot must not be
        // skipped. A newer observed version from a writer we have no commit
        // record for (its coordinator may have died after deciding) is
        // tolerated; a stale one is not.
        if let Some(versions) = ix.by_key.get(&r.key) {
            let expected = versions
                .iter()
                .rev()
                .find(|(ts, _)| *ts <= r.snapshot)
                .copied();
            if let Some((exp_ts, exp_w)) = expected {
                if r.observed_ts.unwrap_or(0) < exp_ts {
                    out.push(Violation {
                        check: "snapshots",
                        txn: Some(r.txn),
                        detail: format!(
                            "read of {} at snapshot {} returned {:?} but the \
                             newest committed version at or below it is ts {} by txn {}",
                            r.key, r.snapshot, r.observed_ts, exp_ts, exp_w
                        ),
                    });
                }
            }
        }
    }
    out
}

/// Per-client monotonicity: a transaction begun after an earlier one of the
/// same client finished never observes older state of a key than the earlier
/// one did. Transaction-to-client attribution comes from the caller because
/// the history does not carry client ids.
pub fn check_sessions(h: &History, client_of: &BTreeMap<u64, u32>) -> Vec<Violation> {
    let ix = Index::build(h);
    let mut out = Vec::new();

    // Group reads by transaction, order transactions per client by begin.
    let mut txn_reads: BTreeMap<u64, Vec<&ReadInfo>> = BTreeMap::new();
    for r in &ix.reads {
        txn_reads.entry(r.txn).or_default().push(r);
    }
    let mut per_client: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for txn in txn_reads.keys() {
        if let (Some(c), Some(_)) = (client_of.get(txn), ix.invokes.get(txn)) {
            per_client.entry(*c).or_default().push(*txn);
        }
    }
    for txns in per_client.values_mut() {
        txns.sort_by_key(|t| (ix.invokes[t].t, *t));
    }

    for (client, txns) in per_client {
        // floor: per key, the newest state this client has observed in a
        // transaction that already finished. pending: observations waiting
        // for their transaction to finish before they bind successors.
        let mut floor: BTreeMap<String, u64> = BTreeMap::new();
        let mut pending: Vec<(u64, BTreeMap<String, u64>)> = Vec::new();
        for txn in txns {
            let begin = ix.invokes[&txn].t;
            pending.retain(|(finish, obs)| {
                if *finish <= begin {
                    for (k, ts) in obs {
                        let e = floor.entry(k.clone()).or_insert(0);
                        *e = (*e).max(*ts);
                    }
                    false
                } else {
                    true
                }
            });
            let reads = &txn_reads[&txn];
            let mut observed: BTreeMap<String, u64> = BTreeMap::new();
            let mut finish = begin;
            for r in reads {
                let seen = r.observed_ts.unwrap_or(0);
                if let Some(&f) = floor.get(&r.key) {
                    if seen < f {
                        out.push(Violation {
                            check: "sessions",
                            txn: Some(r.txn),
                            detail: format!(
                                "client {} observed {} at ts {} after an \
                                 earlier finished transaction observed ts {}",
                                client, r.key, seen, f
                            ),
                        });
                    }
                }
                let e = observed.entry(r.key.clone()).or_insert(0);
                *e = (*e).max(seen);
                finish = finish.max(r.t);
            }
            if let Some(c) = ix.commits.get(&txn) {
                finish = finish.max(c.visible_t);
            }
            pending.push((finish, observed));
        }
    }
    out
}

/// Replica-served reads against the brute-force log-replay oracle: replay
/// each shard's primary redo log, collect every installed version, and
/// require each replica read to return exactly the newest version at or
/// below its snapshot. This catches a replica exposing a partial
/// transaction (its install never reached the log) as well as one hiding a
/// logged install it should have applied, independently of what the
/// coordinators reported.
pub fn check_replica_consistency(
    h: &History,
    logs: &BTreeMap<u32, Vec<crate::replication::RedoRecord>>,
) -> Vec<Violation> {
    use crate::replication::RecordKind;

    let ix = Index::build(h);
    // key -> versions (ts, txn), from commit records only: pending and
    // prepare stage nothing visible, aborts install nothing.
    let mut by_key: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
    for records in logs.values() {
        for rec in records {
            if matches!(rec.kind, RecordKind::Commit | RecordKind::CommitPrepared) {
                for (k, _) in rec.writes() {
                    by_key.entry(k).or_default().push((rec.ts, rec.txn));
                }
            }
        }
    }
    for versions in by_key.values_mut() {
        versions.sort();
    }
    let mut out = Vec::new();
    for r in &ix.reads {
        if r.route != ReadRoute::Replica {
            continue;
        }
        let expected = by_key
            .get(&r.key)
            .and_then(|v| v.iter().rev().find(|(ts, _)| *ts <= r.snapshot))
            .copied();
        let got = r.observed_writer.zip(r.observed_ts);
        let want = expected.map(|(ts, w)| (w, ts));
        if got != want {
            out.push(Violation {
                check: "replica-consistency",
                txn: Some(r.txn),
                detail: format!(
                    "replica read of {} at snapshot {} returned {:?}, log \
                     replay expects {:?} (writer, ts)",
                    r.key, r.snapshot, got, want
                ),
            });
        }
    }
    out
}

/// Published consistency-point values never regress, across collector
/// failovers included.
pub fn check_rcp_monotonic(h: &History) -> Vec<Violation> {
    let ix = Index::build(h);
    let mut out = Vec::new();
    let mut last: Option<(u64, u64)> = None;
    for (t, value) in ix.publishes {
        if let Some((lt, lv)) = last {
            if value < lv {
                out.push(Violation {
                    check: "rcp-monotonic",
                    txn: None,
                    detail: format!(
                        "consistency point regressed from {} (at {}) to {} (at {})",
                        lv, lt, value, t
                    ),
                });
            }
        }
        last = Some((t, value));
    }
    out
}

/// Replica-served reads must come from nodes whose oracle-true replication
/// lag at serve time was within `bound_us` plus `slack_us`.
pub fn check_staleness(h: &History, bound_us: u64, slack_us: u64) -> Vec<Violation> {
    let ix = Index::build(h);
    let mut out = Vec::new();
    for r in &ix.reads {
        if r.route != ReadRoute::Replica {
            continue;
        }
        if let Some(st) = r.true_staleness_us {
            if st > bound_us + slack_us {
                out.push(Violation {
                    check: "staleness",
                    txn: Some(r.txn),
                    detail: format!(
                        "replica read of {} served with true lag {} us, \
                         bound {} us (+{} us slack)",
                        r.key, st, bound_us, slack_us
                    ),
                });
            }
        }
    }
    out
}

/// Run every history checker. `client_of` attributes transactions to client
/// sessions (from the run output); `staleness` is the optional
/// `(bound_us, slack_us)` audit.
pub fn check_all(
    h: &History,
    client_of: &BTreeMap<u64, u32>,
    staleness: Option<(u64, u64)>,
) -> Vec<Violation> {
    let mut v = Vec::new();
    v.extend(check_visibility(h));
    v.extend(check_recency(h));
    v.extend(check_snapshots(h));
    v.extend(check_sessions(h, client_of));
    v.extend(check_rcp_monotonic(h));
    if let Some((bound, slack)) = staleness {
        v.extend(check_staleness(h, bound, slack));
    }
    v
}

/// Count violations per check, for summaries.
pub fn summarize(violations: &[Violation]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for v in violations {
        *m.entry(v.check).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::history::ReadRoute;
    use crate::timestamp::Mode;

    fn invoke(txn: u64, t: u64, snapshot: u64, acq_at: u64) -> HistoryEvent {
        HistoryEvent::Invoke {
            txn,
            cn: 0,
            t,
            snapshot,
            snapshot_mode: Mode::Clock,
            acq_at,
            read_only: true,
            rcp_snapshot: false,
        }
    }

    fn commit(txn: u64, t: u64, ts: u64, acq_at: u64, keys: &[&str]) -> HistoryEvent {
        HistoryEvent::CommitVisible {
            txn,
            cn: 0,
            t,
            ts,
            ts_mode: Mode::Clock,
            acq_at,
            writes: keys.iter().map(|k| k.to_string()).collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn read(
        txn: u64,
        t: u64,
        key: &str,
        route: ReadRoute,
        snapshot: u64,
        observed: Option<(u64, u64)>,
        served_at: u64,
        staleness: Option<u64>,
    ) -> HistoryEvent {
        HistoryEvent::ReadReturn {
            txn,
            t,
            key: key.to_string(),
            node: 0,
            route,
            snapshot,
            observed_writer: observed.map(|(w, _)| w),
            observed_ts: observed.map(|(_, ts)| ts),
            observed_data: observed.map(|(w, _)| w),
            served_at,
            blocked_us: 0,
            true_staleness_us: staleness,
        }
    }

    #[test]
    fn visibility_flags_a_missed_acknowledged_commit() {
        let mut h = History::new();
        h.push(commit(1, 100, 500, 90, &["a"]));
        // Reader acquired its snapshot at 200, after the commit was visible
        // at 100, but missed the write.
        h.push(invoke(2, 210, 450, 200));
        h.push(read(2, 250, "a", ReadRoute::Primary, 450, None, 240, None));
        let v = check_visibility(&h);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].check, "visibility");

        // The same read on a replica route is exempt.
        let mut h2 = History::new();
        h2.push(commit(1, 100, 500, 90, &["a"]));
        h2.push(invoke(2, 210, 450, 200));
        h2.push(read(2, 250, "a", ReadRoute::Replica, 450, None, 240, None));
        assert!(check_visibility(&h2).is_empty());
    }

    #[test]
    fn visibility_exempts_consistency_point_snapshots_entirely() {
        // A replica-routed transaction reads at the published consistency
        // point; keys with no qualifying replica fall back to the primary.
        // The deliberately stale snapshot must not count as a missed commit
        // even for those primary-served reads.
        let mut h = History::new();
        h.push(commit(1, 100, 500, 90, &["a"]));
        h.push(HistoryEvent::Invoke {
            txn: 2,
            cn: 0,
            t: 210,
            snapshot: 450,
            snapshot_mode: Mode::Clock,
            acq_at: 200,
            read_only: true,
            rcp_snapshot: true,
        });
        h.push(read(2, 250, "a", ReadRoute::Primary, 450, None, 240, None));
        assert!(check_visibility(&h).is_empty());
    }

    #[test]
    fn visibility_accepts_observing_a_newer_version() {
        let mut h = History::new();
        h.push(commit(1, 100, 500, 90, &["a"]));
        h.push(commit(3, 150, 600, 140, &["a"]));
        h.push(invoke(2, 210, 700, 200));
        h.push(read(
            2,
            250,
            "a",
            ReadRoute::Primary,
            700,
            Some((3, 600)),
            240,
            None,
        ));
        assert!(check_visibility(&h).is_empty());
    }

    #[test]
    fn bypass_reads_acquire_at_serve_time() {
        let mut h = History::new();
        // Commit visible at 300; the bypass read began earlier but was
        // served at 400, so it must observe the commit.
        h.push(commit(1, 300, 500, 290, &["a"]));
        h.push(invoke(2, 100, 90, 95));
        h.push(read(
            2,
            410,
            "a",
            ReadRoute::PrimaryBypass,
            520,
            None,
            400,
            None,
        ));
        let v = check_visibility(&h);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn recency_flags_observing_a_later_acquired_commit() {
        let mut h = History::new();
        // Reader's begin completed at 100; writer acquired its ts at 150.
        h.push(invoke(2, 100, 400, 90));
        h.push(commit(1, 200, 380, 150, &["a"]));
        h.push(read(
            2,
            250,
            "a",
            ReadRoute::Primary,
            400,
            Some((1, 380)),
            240,
            None,
        ));
        let v = check_recency(&h);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].check, "recency");
    }

    #[test]
    fn snapshots_catch_above_snapshot_missed_and_aborted() {
        let mut h = History::new();
        h.push(commit(1, 100, 300, 90, &["a"]));
        h.push(invoke(2, 110, 350, 105));
        // Above snapshot.
        h.push(read(
            2,
            150,
            "a",
            ReadRoute::Primary,
            350,
            Some((1, 400)),
            140,
            None,
        ));
        // Missed the ts-300 version.
        h.push(read(2, 160, "a", ReadRoute::Replica, 350, None, 150, None));
        // Observed an aborted transaction.
        h.push(HistoryEvent::Abort {
            txn: 9,
            cn: 0,
            t: 80,
            reason: AbortReason::WriteConflict,
        });
        h.push(read(
            2,
            170,
            "a",
            ReadRoute::Primary,
            350,
            Some((9, 250)),
            160,
            None,
        ));
        let v = check_snapshots(&h);
        // The aborted-writer read also misses the committed version, so it
        // is flagged twice; 4 violations total.
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|x| x.check == "snapshots"));
    }

    #[test]
    fn sessions_flag_observed_regression_across_finished_txns() {
        let mut h = History::new();
        h.push(commit(1, 50, 100, 40, &["a"]));
        h.push(commit(3, 60, 200, 55, &["a"]));
        // Txn 10 (client 7) observes ts 200, finishes at 300.
        h.push(invoke(10, 100, 250, 95));
        h.push(read(
            10,
            300,
            "a",
            ReadRoute::Replica,
            250,
            Some((3, 200)),
            290,
            None,
        ));
        // Txn 11 begins at 400, after txn 10 finished, and sees ts 100.
        h.push(invoke(11, 400, 150, 395));
        h.push(read(
            11,
            450,
            "a",
            ReadRoute::Replica,
            150,
            Some((1, 100)),
            440,
            None,
        ));
        let mut clients = BTreeMap::new();
        clients.insert(10, 7);
        clients.insert(11, 7);
        let v = check_sessions(&h, &clients);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].check, "sessions");

        // Different clients: no session relation, no violation.
        let mut other = BTreeMap::new();
        other.insert(10, 7);
        other.insert(11, 8);
        assert!(check_sessions(&h, &other).is_empty());
    }

    #[test]
    fn sessions_ignore_overlapping_transactions() {
        let mut h = History::new();
        h.push(commit(1, 50, 100, 40, &["a"]));
        h.push(commit(3, 60, 200, 55, &["a"]));
        // Txn 10 still running (finishes at 500) when txn 11 begins at 400.
        h.push(invoke(10, 100, 250, 95));
        h.push(read(
            10,
            500,
            "a",
            ReadRoute::Replica,
            250,
            Some((3, 200)),
            490,
            None,
        ));
        h.push(invoke(11, 400, 150, 395));
        h.push(read(
            11,
            450,
            "a",
            ReadRoute::Replica,
            150,
            Some((1, 100)),
            440,
            None,
        ));
        let mut clients = BTreeMap::new();
        clients.insert(10, 7);
        clients.insert(11, 7);
        assert!(check_sessions(&h, &clients).is_empty());
    }

    #[test]
    fn rcp_monotonic_flags_regression() {
        let mut h = History::new();
        for (t, value) in [(100, 10), (200, 20), (300, 15)] {
            h.push(HistoryEvent::RcpPublish {
                t,
                value,
                epoch: 1,
                collector: 0,
                stale_members: vec![],
            });
        }
        let v = check_rcp_monotonic(&h);
        assert_eq!(v.len(), 1);
        assert!(v[0].detail.contains("regressed from 20"));
    }

    #[test]
    fn staleness_audit_uses_bound_plus_slack() {
        let mut h = History::new();
        h.push(invoke(2, 100, 50, 95));
        h.push(read(
            2,
            200,
            "a",
            ReadRoute::Replica,
            50,
            None,
            190,
            Some(120_000),
        ));
        assert_eq!(check_staleness(&h, 100_000, 10_000).len(), 1);
        assert!(check_staleness(&h, 100_000, 30_000).is_empty());
        // Primary reads are never audited.
        let mut h2 = History::new();
        h2.push(invoke(2, 100, 50, 95));
        h2.push(read(
            2,
            200,
            "a",
            ReadRoute::Primary,
            50,
            None,
            190,
            Some(120_000),
        ));
        assert!(check_staleness(&h2, 0, 0).is_empty());
    }
}
