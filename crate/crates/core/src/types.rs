//! Shared domain vocabulary: tasks, trajectories, drafts, observations and
//! timing records.
//!
//! All timestamps are integer milliseconds on a single monotonic clock. The
//! simulator drives a virtual clock, live runs a wall clock; both produce
//! records of the same shape.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Default number of drafts retained per idle window.
pub const DEFAULT_DRAFT_CAP: usize = 5;

/// Milliseconds on the run's clock.
pub type Millis = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Task {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            gold_answer: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_gold(mut self, answer: impl Into<String>) -> Self {
        self.gold_answer = Some(answer.into());
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push("task id is empty".to_string());
        }
        if self.prompt.is_empty() {
            out.push("task prompt is empty".to_string());
        }
        out
    }
}

/// Which drafting prompt produced a draft.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DraftStrategy {
    Prog,
    Rec,
}

impl fmt::Display for DraftStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DraftStrategy::Prog => f.write_str("PROG"),
            DraftStrategy::Rec => f.write_str("REC"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DraftStatus {
    Complete,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draft {
    pub strategy: DraftStrategy,
    pub content: String,
    /// Position of the generation within its idle window, counting failed
    /// and cancelled attempts.
    pub iteration: u32,
    pub status: DraftStatus,
    pub token_count: u64,
    /// Step whose tool execution this draft overlapped.
    pub step_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftBuffer {
    drafts: Vec<Draft>,
    cap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BufferRejection {
    #[error("draft buffer is full (cap {0})")]
    Full(usize),
    #[error("only complete drafts may be buffered")]
    NotComplete,
}

impl DraftBuffer {
    /// # Panics
    /// If `cap` is zero.
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "draft cap must be positive");
        Self {
            drafts: Vec::new(),
            cap,
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.drafts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drafts.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.drafts.len() >= self.cap
    }

    pub fn drafts(&self) -> &[Draft] {
        &self.drafts
    }

    pub fn push(&mut self, draft: Draft) -> Result<(), BufferRejection> {
        if draft.status != DraftStatus::Complete {
            return Err(BufferRejection::NotComplete);
        }
        if self.is_full() {
            return Err(BufferRejection::Full(self.cap));
        }
        self.drafts.push(draft);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.drafts.clear();
    }

    /// Builds a buffer without enforcing the cap, so that malformed inputs
    /// can reach [`validate_trajectory`].
    pub fn from_parts_unchecked(drafts: Vec<Draft>, cap: usize) -> Self {
        Self { drafts, cap }
    }
}

impl Default for DraftBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_DRAFT_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, String>,
    pub call_id: String,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>, call_id: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            arguments: BTreeMap::new(),
            call_id: call_id.into(),
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.arguments.insert(key.into(), value.into());
        self
    }

    /// `name {"k":"v"}` form used in prompts and action parsing.
    pub fn render(&self) -> String {
        let args = serde_json::to_string(&self.arguments).unwrap_or_else(|_| "{}".into());
        format!("{} {}", self.tool_name, args)
    }
}

/// A tool result. Failed calls are still observations, with
/// `success_flag = false`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub call_id: String,
    pub content: String,
    pub arrived_at: Millis,
    pub success_flag: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTiming {
    pub reason_start: Millis,
    pub reason_end: Millis,
    pub tool_start: Millis,
    pub tool_end: Millis,
    pub aggregation_duration: Millis,
}

impl StepTiming {
    pub fn is_ordered(&self) -> bool {
        self.reason_start <= self.reason_end
            && self.reason_end <= self.tool_start
            && self.tool_start <= self.tool_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: u32,
    pub thought: String,
    pub action: ToolCall,
    pub observation: Option<Observation>,
    /// Drafts shown to this step's main generation (from the previous idle
    /// window).
    pub drafts_offered: Vec<Draft>,
    pub timing: StepTiming,
    /// Extra context produced after the observation (revision, plan or
    /// pre-computation output), shown to later main generations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FinalAnswer,
    MaxSteps,
    ModelFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub task_id: String,
    pub steps: Vec<TrajectoryStep>,
    pub finished: bool,
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

impl TrajectoryState {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            steps: Vec::new(),
            finished: false,
            final_answer: None,
            stop_reason: None,
        }
    }

    pub fn last_observation(&self) -> Option<&Observation> {
        self.steps.last().and_then(|s| s.observation.as_ref())
    }

    pub fn finish(&mut self, reason: StopReason, answer: Option<String>) {
        self.finished = true;
        self.stop_reason = Some(reason);
        self.final_answer = answer;
    }
}

/// Timing of one tool call's idle interval and the model work overlapping it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdleWindow {
    pub step_index: u32,
    pub start_ms: Millis,
    pub idle_duration_ms: Millis,
    pub model_busy_intervals: Vec<(Millis, Millis)>,
}

impl IdleWindow {
    pub fn end_ms(&self) -> Millis {
        self.start_ms + self.idle_duration_ms
    }

    pub fn busy_ms(&self) -> Millis {
        self.model_busy_intervals.iter().map(|(s, e)| e - s).sum()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let end = self.end_ms();
        let mut sorted = self.model_busy_intervals.clone();
        sorted.sort_unstable();
        for &(s, e) in &sorted {
            if s > e || s < self.start_ms || e > end {
                out.push("busy interval outside idle window".to_string());
                break;
            }
        }
        if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
            out.push("busy intervals overlap".to_string());
        }
        let total: u64 = sorted.iter().map(|(s, e)| e.saturating_sub(*s)).sum();
        if total > self.idle_duration_ms {
            out.push("busy time exceeds idle duration".to_string());
        }
        out
    }
}

/// Checks every invariant of a trajectory and of the buffers and windows
/// recorded alongside it. Violations are returned, never raised.
pub fn validate_trajectory(state: &TrajectoryState) -> Vec<String> {
    validate_run(state, &[], &[])
}

/// As [`validate_trajectory`], additionally checking the draft buffers and
/// idle windows captured during the run.
pub fn validate_run(
    state: &TrajectoryState,
    buffers: &[DraftBuffer],
    windows: &[IdleWindow],
) -> Vec<String> {
    let mut out = Vec::new();
    for (pos, step) in state.steps.iter().enumerate() {
        if step.index as usize != pos {
            out.push(format!("step {} out of order (expected {pos})", step.index));
        }
        if step.observation.is_none() && pos + 1 != state.steps.len() {
            out.push(format!("step {} missing observation", step.index));
        }
        if step.drafts_offered.len() > DEFAULT_DRAFT_CAP {
            out.push("DraftBuffer over cap".to_string());
        }
        if step
            .drafts_offered
            .iter()
            .any(|d| d.status != DraftStatus::Complete)
        {
            out.push("cancelled draft offered to main generation".to_string());
        }
        if !step.timing.is_ordered() {
            out.push(format!("step {} timing out of order", step.index));
        }
        if let Some(obs) = &step.observation {
            if obs.call_id != step.action.call_id {
                out.push(format!("step {} observation call_id mismatch", step.index));
            }
        }
    }
    match (state.finished, state.stop_reason, &state.final_answer) {
        (false, None, None) => {}
        (true, Some(StopReason::FinalAnswer), Some(_)) => {}
        (true, Some(StopReason::MaxSteps | StopReason::ModelFailure), None) => {}
        _ => out.push("final_answer inconsistent with finished state".to_string()),
    }
    for buffer in buffers {
        if buffer.len() > buffer.cap() {
            out.push("DraftBuffer over cap".to_string());
        }
        if buffer
            .drafts()
            .iter()
            .any(|d| d.status != DraftStatus::Complete)
        {
            out.push("DraftBuffer holds a non-complete draft".to_string());
        }
    }
    for window in windows {
        out.extend(window.violations());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(i: u32) -> Draft {
        Draft {
            strategy: DraftStrategy::Prog,
            content: format!("plan {i}"),
            iteration: i,
            status: DraftStatus::Complete,
            token_count: 10,
            step_index: 0,
        }
    }

    fn step(index: u32) -> TrajectoryStep {
        let call = ToolCall::new("lookup", format!("t-{index}")).arg("key", "k");
        let base = u64::from(index) * 100;
        TrajectoryStep {
            index,
            thought: "go".into(),
            observation: Some(Observation {
                call_id: call.call_id.clone(),
                content: "ok".into(),
                arrived_at: base + 50,
                success_flag: true,
            }),
            action: call,
            drafts_offered: vec![],
            notes: vec![],
            timing: StepTiming {
                reason_start: base,
                reason_end: base + 10,
                tool_start: base + 10,
                tool_end: base + 50,
                aggregation_duration: 0,
            },
        }
    }

    #[test]
    fn well_formed_trajectory_has_no_violations() {
        let mut state = TrajectoryState::new("t");
        state.steps = (0..3).map(step).collect();
        state.finish(StopReason::FinalAnswer, Some("x".into()));
        assert!(validate_trajectory(&state).is_empty());
    }

    #[test]
    fn over_cap_buffer_is_reported() {
        let state = TrajectoryState::new("t");
        let buffer = DraftBuffer::from_parts_unchecked((0..6).map(draft).collect(), 5);
        assert_eq!(validate_run(&state, &[buffer], &[]), vec!["DraftBuffer over cap"]);
    }

    #[test]
    fn busy_interval_outside_window_is_reported() {
        let state = TrajectoryState::new("t");
        let window = IdleWindow {
            step_index: 0,
            start_ms: 1000,
            idle_duration_ms: 500,
            model_busy_intervals: vec![(1100, 1700)],
        };
        let v = validate_run(&state, &[], &[window]);
        assert_eq!(v[0], "busy interval outside idle window");
    }

    #[test]
    fn buffer_rejects_over_cap_and_cancelled() {
        let mut buf = DraftBuffer::new(2);
        buf.push(draft(0)).unwrap();
        buf.push(draft(1)).unwrap();
        assert_eq!(buf.push(draft(2)), Err(BufferRejection::Full(2)));
        let mut b2 = DraftBuffer::new(2);
        let mut d = draft(0);
        d.status = DraftStatus::Cancelled;
        assert_eq!(b2.push(d), Err(BufferRejection::NotComplete));
    }

    #[test]
    fn finished_without_reason_is_inconsistent() {
        let mut state = TrajectoryState::new("t");
        state.finished = true;
        assert_eq!(
            validate_trajectory(&state),
            vec!["final_answer inconsistent with finished state"]
        );
    }

    #[test]
    fn out_of_order_steps_are_reported() {
        let mut state = TrajectoryState::new("t");
        state.steps = vec![step(0), step(2)];
        assert!(validate_trajectory(&state)[0].contains("out of order"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn buffer_never_exceeds_cap(cap in 1usize..8, ops in proptest::collection::vec(any::<bool>(), 0..40)) {
                let mut buf = DraftBuffer::new(cap);
                for (i, cancelled) in ops.into_iter().enumerate() {
                    let mut d = draft(i as u32);
                    if cancelled {
                        d.status = DraftStatus::Cancelled;
                    }
                    let _ = buf.push(d);
                    prop_assert!(buf.len() <= cap);
                    prop_assert!(buf.drafts().iter().all(|d| d.status == DraftStatus::Complete));
                }
            }

            #[test]
            fn packed_busy_intervals_fit_window(start in 0u64..10_000, lens in proptest::collection::vec(0u64..3_000, 0..8), slack in 0u64..5_000) {
                let mut t = start;
                let mut busy = Vec::new();
                for len in lens {
                    busy.push((t, t + len));
                    t += len;
                }
                let w = IdleWindow {
                    step_index: 0,
                    start_ms: start,
                    idle_duration_ms: t - start + slack,
                    model_busy_intervals: busy,
                };
                prop_assert!(w.violations().is_empty());
                prop_assert!(w.busy_ms() <= w.idle_duration_ms);
            }
        }
    }
}
