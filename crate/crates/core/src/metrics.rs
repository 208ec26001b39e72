//! Idle-time utilization, ultra-short ratios, token split and run summaries.
//!
//! Metrics are computed from a [`TaskTally`], which the orchestrator fills
//! online and [`tallies_from_events`] rebuilds from a trace. Tallies hold
//! integers only, so both routes produce identical floating-point results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::orchestrator::PolicyKind;
use crate::trace::{group_by_task, EventKind, TraceEvent};
use crate::types::{IdleWindow, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UltraShortBin {
    High,
    Medium,
    Low,
}

impl UltraShortBin {
    pub fn as_str(self) -> &'static str {
        match self {
            UltraShortBin::High => "HIGH",
            UltraShortBin::Medium => "MEDIUM",
            UltraShortBin::Low => "LOW",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub policy: PolicyKind,
    pub success: bool,
    pub itu: f64,
    pub ultra_short_ratio: f64,
    pub bin: UltraShortBin,
    pub tokens_idle: u64,
    pub tokens_test: u64,
    pub wall_ms: Millis,
    pub reasoning_ms: Millis,
    pub idle_ms: Millis,
    pub steps: u32,
}

/// Σ busy / Σ idle over the task's windows; 0 when there was no idle time.
pub fn compute_itu(windows: &[IdleWindow]) -> f64 {
    let idle: u64 = windows.iter().map(|w| w.idle_duration_ms).sum();
    if idle == 0 {
        return 0.0;
    }
    let busy: u64 = windows.iter().map(IdleWindow::busy_ms).sum();
    busy as f64 / idle as f64
}

/// Share of tool calls shorter than one reasoning step; 0 for no calls.
pub fn compute_ultra_short_ratio(tool_durations: &[Millis], reasoning_step_ms: Millis) -> f64 {
    if tool_durations.is_empty() {
        return 0.0;
    }
    let short = tool_durations.iter().filter(|&&d| d < reasoning_step_ms).count();
    short as f64 / tool_durations.len() as f64
}

/// 0.25 and 0.75 fall in the middle bin.
pub fn bin_ultra_short(ratio: f64) -> UltraShortBin {
    if ratio > 0.75 {
        UltraShortBin::High
    } else if ratio < 0.25 {
        UltraShortBin::Low
    } else {
        UltraShortBin::Medium
    }
}

/// (idle, test) token totals over a trace.
pub fn compute_token_split(events: &[TraceEvent]) -> (u64, u64) {
    events.iter().fold((0, 0), |(idle, test), e| {
        let t = e.payload.tokens.unwrap_or(0);
        if e.kind.is_idle_generation() {
            (idle + t, test)
        } else if e.kind.is_test_generation() {
            (idle, test + t)
        } else {
            (idle, test)
        }
    })
}

/// Clips busy intervals to `[start, end]`, dropping empty pieces.
pub fn clip_intervals(intervals: &[(Millis, Millis)], start: Millis, end: Millis) -> Vec<(Millis, Millis)> {
    intervals
        .iter()
        .map(|&(s, e)| (s.max(start), e.min(end)))
        .filter(|(s, e)| s < e)
        .collect()
}

/// Raw per-task measurements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTally {
    pub task_id: String,
    pub policy: Option<PolicyKind>,
    pub success: bool,
    pub windows: Vec<IdleWindow>,
    /// Successful main generation durations.
    pub main_durations: Vec<Millis>,
    /// Main (including failed attempts), forecast and revision time.
    pub reasoning_ms: Millis,
    pub tokens_idle: u64,
    pub tokens_test: u64,
    pub wall_ms: Millis,
}

impl TaskTally {
    /// Ultra-short threshold: integer comparison against the mean main
    /// generation time of this task.
    pub fn ultra_short_ratio(&self) -> f64 {
        let n = self.main_durations.len() as u64;
        if self.windows.is_empty() || n == 0 {
            return 0.0;
        }
        let total: u64 = self.main_durations.iter().sum();
        let short = self
            .windows
            .iter()
            .filter(|w| w.idle_duration_ms * n < total)
            .count();
        short as f64 / self.windows.len() as f64
    }

    pub fn metrics(&self) -> TaskMetrics {
        let ratio = self.ultra_short_ratio();
        TaskMetrics {
            task_id: self.task_id.clone(),
            policy: self.policy.unwrap_or(PolicyKind::Vanilla),
            success: self.success,
            itu: compute_itu(&self.windows),
            ultra_short_ratio: ratio,
            bin: bin_ultra_short(ratio),
            tokens_idle: self.tokens_idle,
            tokens_test: self.tokens_test,
            wall_ms: self.wall_ms,
            reasoning_ms: self.reasoning_ms,
            idle_ms: self.windows.iter().map(|w| w.idle_duration_ms).sum(),
            steps: self.windows.len() as u32,
        }
    }
}

/// Rebuilds tallies from trace events alone.
pub fn tallies_from_events(events: &[TraceEvent]) -> Vec<TaskTally> {
    group_by_task(events)
        .into_iter()
        .map(|(key, evs)| {
            let mut tally = TaskTally {
                task_id: key.task_id.clone(),
                policy: Some(key.policy),
                ..TaskTally::default()
            };
            let mut task_start = 0;
            let mut busy: Vec<(Millis, Millis)> = Vec::new();
            for e in &evs {
                let tokens = e.payload.tokens.unwrap_or(0);
                let duration = e.duration_ms().unwrap_or(0);
                match e.kind {
                    EventKind::TaskStart => task_start = e.t_ms,
                    EventKind::TaskEnd => {
                        tally.wall_ms = e.t_ms - task_start;
                        tally.success = e.payload.success.unwrap_or(false);
                    }
                    EventKind::MainGen => {
                        tally.reasoning_ms += duration;
                        tally.tokens_test += tokens;
                        if e.payload.error.is_none() {
                            tally.main_durations.push(duration);
                        }
                    }
                    EventKind::Forecast | EventKind::Revision => {
                        tally.reasoning_ms += duration;
                        tally.tokens_test += tokens;
                    }
                    EventKind::DraftComplete
                    | EventKind::DraftCancelled
                    | EventKind::DraftFailed
                    | EventKind::SleepComplete => {
                        tally.tokens_idle += tokens;
                        if let Some(s) = e.payload.start_ms {
                            busy.push((s, e.t_ms));
                        }
                    }
                    EventKind::ToolComplete => {
                        let start = e.payload.start_ms.unwrap_or(e.t_ms);
                        tally.windows.push(IdleWindow {
                            step_index: e.step,
                            start_ms: start,
                            idle_duration_ms: e.t_ms - start,
                            model_busy_intervals: Vec::new(),
                        });
                    }
                    _ => {}
                }
            }
            // sleep-time work may finish after its window closes
            for w in &mut tally.windows {
                w.model_busy_intervals = clip_intervals(&busy, w.start_ms, w.end_ms());
            }
            tally
        })
        .collect()
}

pub fn metrics_from_events(events: &[TraceEvent]) -> Vec<TaskMetrics> {
    tallies_from_events(events).iter().map(TaskTally::metrics).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub n_tasks: usize,
    pub success_rate: f64,
    pub itu: f64,
    pub ultra_short_ratio: f64,
    pub tokens_idle: f64,
    pub tokens_test: f64,
    pub wall_ms: f64,
    pub reasoning_ms: f64,
    pub idle_ms: f64,
    pub steps: f64,
}

impl MetricMeans {
    fn of(rows: &[&TaskMetrics]) -> Self {
        let n = rows.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&TaskMetrics) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n as f64;
        Self {
            n_tasks: n,
            success_rate: mean(&|m| f64::from(u8::from(m.success))),
            itu: mean(&|m| m.itu),
            ultra_short_ratio: mean(&|m| m.ultra_short_ratio),
            tokens_idle: mean(&|m| m.tokens_idle as f64),
            tokens_test: mean(&|m| m.tokens_test as f64),
            wall_ms: mean(&|m| m.wall_ms as f64),
            reasoning_ms: mean(&|m| m.reasoning_ms as f64),
            idle_ms: mean(&|m| m.idle_ms as f64),
            steps: mean(&|m| f64::from(m.steps)),
        }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("n_tasks", self.n_tasks as f64),
            ("success_rate", self.success_rate),
            ("itu", self.itu),
            ("ultra_short_ratio", self.ultra_short_ratio),
            ("tokens_idle", self.tokens_idle),
            ("tokens_test", self.tokens_test),
            ("wall_ms", self.wall_ms),
            ("reasoning_ms", self.reasoning_ms),
            ("idle_ms", self.idle_ms),
            ("steps", self.steps),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub overall: MetricMeans,
    pub per_bin: BTreeMap<UltraShortBin, MetricMeans>,
}

impl RunSummary {
    pub fn is_empty(&self) -> bool {
        self.overall.n_tasks == 0
    }
}

pub fn aggregate_run(metrics: &[TaskMetrics]) -> RunSummary {
    let all: Vec<&TaskMetrics> = metrics.iter().collect();
    let mut bins: BTreeMap<UltraShortBin, Vec<&TaskMetrics>> = BTreeMap::new();
    for m in metrics {
        bins.entry(m.bin).or_default().push(m);
    }
    RunSummary {
        overall: MetricMeans::of(&all),
        per_bin: bins.into_iter().map(|(b, rows)| (b, MetricMeans::of(&rows))).collect(),
    }
}

/// Summaries keyed by policy.
pub fn aggregate_by_policy(metrics: &[TaskMetrics]) -> BTreeMap<PolicyKind, RunSummary> {
    let mut groups: BTreeMap<PolicyKind, Vec<TaskMetrics>> = BTreeMap::new();
    for m in metrics {
        groups.entry(m.policy).or_default().push(m.clone());
    }
    groups.into_iter().map(|(p, rows)| (p, aggregate_run(&rows))).collect()
}
