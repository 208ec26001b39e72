//! Report tables computed from trace events alone.
//!
//! CSV schemas (header row first):
//!
//! | file                 | columns |
//! |----------------------|---------|
//! | `summary.csv`        | `policy,metric,value` |
//! | `bins.csv`           | `policy,bin,metric,value` |
//! | `tasks.csv`          | one row per task, [`TaskMetrics`] fields |
//! | `tool_histogram.csv` | `policy,bucket,lo_ms,hi_ms,count` |
//! | `token_split.csv`    | `policy,tokens_idle,tokens_test` |
//! | `latency_share.csv`  | `policy,mean_wall_ms,mean_reasoning_ms,mean_idle_ms,idle_share` |
//!
//! Histogram buckets are logarithmic with ten per decade: bucket `k` covers
//! `[10^(k/10), 10^((k+1)/10))` ms. Zero-length calls land in a bucket with
//! an empty label covering `[0, 1)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::metrics::{aggregate_by_policy, metrics_from_events, RunSummary, TaskMetrics};
use crate::orchestrator::PolicyKind;
use crate::trace::{group_by_task, EventKind, TraceEvent};
use crate::types::Millis;

pub const BUCKETS_PER_DECADE: i32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub policy: PolicyKind,
    pub bin: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub policy: PolicyKind,
    pub bucket: Option<i32>,
    pub lo_ms: f64,
    pub hi_ms: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSplitRow {
    pub policy: PolicyKind,
    pub tokens_idle: u64,
    pub tokens_test: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyShareRow {
    pub policy: PolicyKind,
    pub mean_wall_ms: f64,
    pub mean_reasoning_ms: f64,
    pub mean_idle_ms: f64,
    /// Tool wait as a share of wall time.
    pub idle_share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Distinct config fingerprints found on TASK_START events.
    pub fingerprints: Vec<String>,
    pub tasks: Vec<TaskMetrics>,
    pub policies: BTreeMap<PolicyKind, RunSummary>,
    pub summary: Vec<SummaryRow>,
    pub bins: Vec<BinRow>,
    pub tool_histogram: Vec<HistogramRow>,
    pub token_split: Vec<TokenSplitRow>,
    pub latency_share: Vec<LatencyShareRow>,
}

impl RunReport {
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Lower edge of bucket `k` in ms.
pub fn bucket_edge(k: i32) -> f64 {
    10f64.powf(f64::from(k) / f64::from(BUCKETS_PER_DECADE))
}

/// Bucket holding `ms`, or `None` for zero.
pub fn bucket_of(ms: Millis) -> Option<i32> {
    if ms == 0 {
        return None;
    }
    let x = ms as f64;
    let mut k = (x.log10() * f64::from(BUCKETS_PER_DECADE)).floor() as i32;
    // log10 rounding can land one off near an edge
    while bucket_edge(k + 1) <= x {
        k += 1;
    }
    while bucket_edge(k) > x {
        k -= 1;
    }
    Some(k)
}

/// Per-call tool durations by policy, from TOOL_COMPLETE events.
pub fn tool_durations(events: &[TraceEvent]) -> BTreeMap<PolicyKind, Vec<Millis>> {
    let mut out: BTreeMap<PolicyKind, Vec<Millis>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::ToolComplete) {
        if let Some(d) = e.duration_ms() {
            out.entry(e.policy).or_default().push(d);
        }
    }
    out
}

pub fn tool_histogram(events: &[TraceEvent]) -> Vec<HistogramRow> {
    let mut rows = Vec::new();
    for (policy, durations) in tool_durations(events) {
        let mut counts: BTreeMap<Option<i32>, u64> = BTreeMap::new();
        for d in durations {
            *counts.entry(bucket_of(d)).or_default() += 1;
        }
        for (bucket, count) in counts {
            let (lo_ms, hi_ms) = match bucket {
                Some(k) => (bucket_edge(k), bucket_edge(k + 1)),
                None => (0.0, 1.0),
            };
            rows.push(HistogramRow {
                policy,
                bucket,
                lo_ms,
                hi_ms,
                count,
            });
        }
    }
    rows
}

/// Builds every table. A pure function of the events.
pub fn build_report(events: &[TraceEvent]) -> RunReport {
    let tasks = metrics_from_events(events);
    let policies = aggregate_by_policy(&tasks);
    let fingerprints: BTreeSet<String> = group_by_task(events)
        .values()
        .flat_map(|evs| evs.iter().filter(|e| e.kind == EventKind::TaskStart))
        .filter_map(|e| e.payload.fingerprint.clone())
        .collect();

    let mut summary = Vec::new();
    let mut bins = Vec::new();
    let mut latency_share = Vec::new();
    for (&policy, s) in &policies {
        for (metric, value) in s.overall.fields() {
            summary.push(SummaryRow {
                policy,
                metric: metric.into(),
                value,
            });
        }
        for (bin, means) in &s.per_bin {
            for (metric, value) in means.fields() {
                bins.push(BinRow {
                    policy,
                    bin: bin.as_str().into(),
                    metric: metric.into(),
                    value,
                });
            }
        }
        let o = &s.overall;
        latency_share.push(LatencyShareRow {
            policy,
            mean_wall_ms: o.wall_ms,
            mean_reasoning_ms: o.reasoning_ms,
            mean_idle_ms: o.idle_ms,
            idle_share: if o.wall_ms > 0.0 { o.idle_ms / o.wall_ms } else { 0.0 },
        });
    }

    let mut split: BTreeMap<PolicyKind, (u64, u64)> = BTreeMap::new();
    for m in &tasks {
        let e = split.entry(m.policy).or_default();
        e.0 += m.tokens_idle;
        e.1 += m.tokens_test;
    }
    let token_split = split
        .into_iter()
        .map(|(policy, (tokens_idle, tokens_test))| TokenSplitRow {
            policy,
            tokens_idle,
            tokens_test,
        })
        .collect();

    RunReport {
        fingerprints: fingerprints.into_iter().collect(),
        tool_histogram: tool_histogram(events),
        tasks,
        policies,
        summary,
        bins,
        token_split,
        latency_share,
    }
}

/// Renders rows as CSV with a header row. An empty table still gets its
/// header.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const TASK_COLUMNS: [&str; 12] = [
    "task_id",
    "policy",
    "success",
    "itu",
    "ultra_short_ratio",
    "bin",
    "tokens_idle",
    "tokens_test",
    "wall_ms",
    "reasoning_ms",
    "idle_ms",
    "steps",
];

/// `(file name, contents)` for every CSV table.
pub fn csv_tables(r: &RunReport) -> Result<Vec<(&'static str, String)>, csv::Error> {
    Ok(vec![
        ("summary.csv", to_csv(&r.summary, &["policy", "metric", "value"])?),
        ("bins.csv", to_csv(&r.bins, &["policy", "bin", "metric", "value"])?),
        ("tasks.csv", to_csv(&r.tasks, &TASK_COLUMNS)?),
        (
            "tool_histogram.csv",
            to_csv(&r.tool_histogram, &["policy", "bucket", "lo_ms", "hi_ms", "count"])?,
        ),
        ("token_split.csv", to_csv(&r.token_split, &["policy", "tokens_idle", "tokens_test"])?),
        (
            "latency_share.csv",
            to_csv(
                &r.latency_share,
                &["policy", "mean_wall_ms", "mean_reasoning_ms", "mean_idle_ms", "idle_share"],
            )?,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Payload;

    #[test]
    fn buckets_are_ten_per_decade() {
        assert_eq!(bucket_of(0), None);
        assert_eq!(bucket_of(1), Some(0));
        assert_eq!(bucket_of(10), Some(10));
        assert_eq!(bucket_of(100), Some(20));
        assert_eq!(bucket_of(1000), Some(30));
        assert_eq!(bucket_of(999), Some(29));
        for ms in [1u64, 7, 13, 250, 1999, 2000, 123_456] {
            let k = bucket_of(ms).unwrap();
            assert!(bucket_edge(k) <= ms as f64 && (ms as f64) < bucket_edge(k + 1), "{ms}");
        }
    }

    #[test]
    fn empty_trace_empty_report() {
        let r = build_report(&[]);
        assert!(r.is_empty());
        let tables = csv_tables(&r).unwrap();
        assert_eq!(tables[0].1, "policy,metric,value\n");
    }

    #[test]
    fn histogram_counts_tool_calls() {
        let ev = |t: Millis, start: Millis| TraceEvent {
            seq: 0,
            t_ms: t,
            policy: PolicyKind::Vanilla,
            task_id: "a".into(),
            step: 1,
            kind: EventKind::ToolComplete,
            payload: Payload {
                start_ms: Some(start),
                ..Payload::default()
            },
        };
        let rows = tool_histogram(&[ev(1000, 0), ev(2000, 1000), ev(5, 5)]);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].bucket, rows[0].count), (None, 1));
        assert_eq!((rows[1].bucket, rows[1].count), (Some(30), 2));
    }
}
