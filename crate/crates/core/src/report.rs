// Copyright 2026 the geotx authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Run reports: deterministic aggregates over a history, serialized as JSON
//! for single runs and as CSV rows for sweeps.
//!
//! A report can be built from a history alone (latencies then span snapshot
//! acquisition to commit acknowledgement) or from a full run output, which
//! additionally carries client-side submission-to-acknowledgement latencies
//! and engine counters. All aggregation is integer or order-stable, so the
//! same run always serializes to the same bytes.

use crate::cluster::history::{History, HistoryEvent};
use crate::cluster::runner::RunOutput;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mean time committed transactions spent in each stage of their life.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    /// Snapshot acquisition to begin-complete (the invocation wait).
    pub begin_wait_mean_us: u64,
    /// Begin-complete to the last read returning.
    pub read_mean_us: u64,
    /// Last read (or begin) to the commit acknowledgement, covering writes,
    /// the commit grant, and any visibility wait.
    pub commit_mean_us: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub duration_us: u64,
    pub committed: u64,
    pub aborted: u64,
    pub aborts_by_reason: BTreeMap<String, u64>,
    /// Committed transactions per second of simulated time.
    pub throughput_per_sec: f64,
    /// Aborted over started (committed plus aborted).
    pub abort_rate: f64,
    pub latency_p50_us: u64,
    pub latency_p99_us: u64,
    pub latency_mean_us: u64,
    pub reads_total: u64,
    pub read_routes: BTreeMap<String, u64>,
    /// Fraction of reads served by asynchronous replicas.
    pub replica_read_share: f64,
    /// 99th percentile of time reads spent parked at a serving node.
    pub read_block_p99_us: u64,
    pub commits_by_mode: BTreeMap<String, u64>,
    pub phases: PhaseBreakdown,
    pub rcp_publishes: u64,
    pub transitions_rejected: u64,
    pub envelope_violations: u64,
    pub events_fired: u64,
    pub messages_sent: u64,
}

/// Nearest-rank percentile over a sorted slice; zero when empty.
fn percentile(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = crate::util::div_ceil(pct * sorted.len() as u64, 100).max(1);
    sorted[(rank - 1) as usize]
}

fn mean(samples: &[u64]) -> u64 {
    if samples.is_empty() {
        0
    } else {
        samples.iter().sum::<u64>() / samples.len() as u64
    }
}

impl Report {
    /// Aggregate a bare history. Latency here runs from snapshot acquisition
    /// to the commit acknowledgement, the span the history can see.
    pub fn from_history(h: &History, duration_us: u64) -> Report {
        struct Txn {
            acq_at: u64,
            begin_t: u64,
            last_read_t: u64,
        }
        let mut txns: BTreeMap<u64, Txn> = BTreeMap::new();
        let mut r = Report {
            duration_us,
            ..Report::default()
        };
        let mut latencies = Vec::new();
        let mut begin_waits = Vec::new();
        let mut read_spans = Vec::new();
        let mut commit_spans = Vec::new();
        let mut blocked = Vec::new();
        for ev in &h.events {
            match ev {
                HistoryEvent::Invoke { txn, t, acq_at, .. } => {
                    txns.insert(
                        *txn,
                        Txn {
                            acq_at: *acq_at,
                            begin_t: *t,
                            last_read_t: 0,
                        },
                    );
                }
                HistoryEvent::ReadReturn { txn, t, route, blocked_us, .. } => {
                    r.reads_total += 1;
                    *r.read_routes.entry(format!("{route:?}")).or_insert(0) += 1;
                    blocked.push(*blocked_us);
                    if let Some(tx) = txns.get_mut(txn) {
                        tx.last_read_t = (*t).max(tx.last_read_t);
                    }
                }
                HistoryEvent::CommitVisible { txn, t, ts_mode, .. } => {
                    r.committed += 1;
                    *r.commits_by_mode.entry(ts_mode.to_string()).or_insert(0) += 1;
                    if let Some(tx) = txns.get(txn) {
                        latencies.push(t.saturating_sub(tx.acq_at));
                        begin_waits.push(tx.begin_t.saturating_sub(tx.acq_at));
                        let read_end = tx.last_read_t.max(tx.begin_t);
                        read_spans.push(read_end - tx.begin_t);
                        commit_spans.push(t.saturating_sub(read_end));
                    }
                }
                HistoryEvent::Abort { reason, .. } => {
                    r.aborted += 1;
                    *r
                        .aborts_by_reason
                        .entry(format!("{reason:?}"))
                        .or_insert(0) += 1;
                }
                HistoryEvent::RcpPublish { .. } => r.rcp_publishes += 1,
                _ => {}
            }
        }
        latencies.sort_unstable();
        r.latency_p50_us = percentile(&latencies, 50);
        r.latency_p99_us = percentile(&latencies, 99);
        r.latency_mean_us = mean(&latencies);
        blocked.sort_unstable();
        r.read_block_p99_us = percentile(&blocked, 99);
        r.phases = PhaseBreakdown {
            begin_wait_mean_us: mean(&begin_waits),
            read_mean_us: mean(&read_spans),
            commit_mean_us: mean(&commit_spans),
        };
        r.finish_ratios();
        r
    }

    /// Aggregate a full run. Latency percentiles come from the client side
    /// (submission to acknowledgement); everything else from the history and
    /// the engine counters.
    pub fn from_run(out: &RunOutput) -> Report {
        let mut r = Report::from_history(&out.history, out.duration_us);
        r.scenario = out.name.clone();
        r.seed = out.seed;
        let mut lat = out.metrics.latency_us.clone();
        lat.sort_unstable();
        r.latency_p50_us = percentile(&lat, 50);
        r.latency_p99_us = percentile(&lat, 99);
        r.latency_mean_us = mean(&lat);
        let mut blocked = out.metrics.read_blocked_us.clone();
        blocked.sort_unstable();
        r.read_block_p99_us = percentile(&blocked, 99);
        r.transitions_rejected = out.metrics.transitions_rejected;
        r.envelope_violations = out.envelope_violations;
        r.events_fired = out.stats.events_fired;
        r.messages_sent = out.stats.messages_sent;
        r
    }

    fn finish_ratios(&mut self) {
        if self.duration_us > 0 {
            self.throughput_per_sec =
                self.committed as f64 * 1_000_000.0 / self.duration_us as f64;
        }
        let started = self.committed + self.aborted;
        if started > 0 {
            self.abort_rate = self.aborted as f64 / started as f64;
        }
        if self.reads_total > 0 {
            let replica = self.read_routes.get("Replica").copied().unwrap_or(0);
            self.replica_read_share = replica as f64 / self.reads_total as f64;
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn csv_header() -> &'static str {
        "scenario,seed,duration_us,committed,aborted,throughput_per_sec,\
         abort_rate,latency_p50_us,latency_p99_us,latency_mean_us,\
         reads_total,replica_read_share,read_block_p99_us,\
         begin_wait_mean_us,read_mean_us,commit_mean_us,rcp_publishes,\
         transitions_rejected,envelope_violations"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{:.6},{},{},{},{},{},{},{}",
            self.scenario,
            self.seed,
            self.duration_us,
            self.committed,
            self.aborted,
            self.throughput_per_sec,
            self.abort_rate,
            self.latency_p50_us,
            self.latency_p99_us,
            self.latency_mean_us,
            self.reads_total,
            self.replica_read_share,
            self.read_block_p99_us,
            self.phases.begin_wait_mean_us,
            self.phases.read_mean_us,
            self.phases.commit_mean_us,
            self.rcp_publishes,
            self.transitions_rejected,
            self.envelope_violations,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::history::ReadRoute;
    use crate::timestamp::Mode;

    #[test]
    fn empty_history_zeroes_out() {
        let r = Report::from_history(&History::new(), 1_000_000);
        assert_eq!(r.committed, 0);
        assert_eq!(r.aborted, 0);
        assert_eq!(r.throughput_per_sec, 0.0);
        assert_eq!(r.abort_rate, 0.0);
        assert_eq!(r.latency_p50_us, 0);
        assert_eq!(r.latency_p99_us, 0);
        assert_eq!(r.replica_read_share, 0.0);
        assert_eq!(r.phases, PhaseBreakdown::default());
    }

    #[test]
    fn hundred_commits_over_a_second() {
        let mut h = History::new();
        for i in 0..100u64 {
            let acq = 1_000 * i;
            h.push(HistoryEvent::Invoke {
                txn: i,
                cn: 0,
                t: acq,
                snapshot: 1,
                snapshot_mode: Mode::Clock,
                acq_at: acq,
                read_only: false,
                rcp_snapshot: false,
            });
            h.push(HistoryEvent::CommitVisible {
                txn: i,
                cn: 0,
                t: acq + i + 1,
                ts: 2,
                ts_mode: Mode::Clock,
                acq_at: acq,
                writes: vec!["t0.k1".into()],
            });
        }
        let r = Report::from_history(&h, 1_000_000);
        assert_eq!(r.committed, 100);
        assert!((r.throughput_per_sec - 100.0).abs() < 1e-9);
        // Latencies are 1..=100 us.
        assert_eq!(r.latency_p50_us, 50);
        assert_eq!(r.latency_p99_us, 99);
        assert_eq!(r.latency_mean_us, 50);
        assert_eq!(r.abort_rate, 0.0);
    }

    #[test]
    fn route_shares_and_abort_rate() {
        let mut h = History::new();
        let read = |txn, route| HistoryEvent::ReadReturn {
            txn,
            t: 10,
            key: "t0.k1".into(),
            node: 5,
            route,
            snapshot: 10,
            observed_writer: None,
            observed_ts: None,
            observed_data: None,
            served_at: 10,
            blocked_us: 0,
            true_staleness_us: None,
        };
        h.push(read(1, ReadRoute::Replica));
        h.push(read(1, ReadRoute::Primary));
        h.push(read(2, ReadRoute::Replica));
        h.push(read(2, ReadRoute::PrimaryBypass));
        h.push(HistoryEvent::Abort {
            txn: 2,
            cn: 0,
            t: 20,
            reason: crate::cluster::history::AbortReason::WriteConflict,
        });
        let r = Report::from_history(&h, 1_000_000);
        assert_eq!(r.reads_total, 4);
        assert!((r.replica_read_share - 0.5).abs() < 1e-9);
        assert_eq!(r.aborted, 1);
        assert!((r.abort_rate - 1.0).abs() < 1e-9);
        assert_eq!(r.read_routes["Replica"], 2);
    }

    #[test]
    fn csv_row_matches_header_width() {
        let header_cols = Report::csv_header().split(',').count();
        let row_cols = Report::default().csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
    }

    #[test]
    fn json_roundtrips() {
        let mut r = Report::default();
        r.scenario = "x".into();
        r.committed = 7;
        r.read_routes.insert("Replica".into(), 3);
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
