//! JSONL run traces: event schema, sinks, reader and validators.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{init_posterior, update_posterior, ForecastSignal, StrategyPosterior};
use crate::model::CallKind;
use crate::orchestrator::PolicyKind;
use crate::types::{DraftStrategy, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    TaskStart,
    StepStart,
    Aggregate,
    MainGen,
    ToolStart,
    DraftStart,
    DraftComplete,
    DraftCancelled,
    DraftFailed,
    SleepStart,
    SleepComplete,
    ToolComplete,
    Forecast,
    PosteriorUpdate,
    Revision,
    FinalAnswer,
    TaskEnd,
}

impl EventKind {
    /// Generation events whose tokens count as idle-time spend.
    pub fn is_idle_generation(self) -> bool {
        matches!(
            self,
            EventKind::DraftComplete | EventKind::DraftCancelled | EventKind::DraftFailed | EventKind::SleepComplete
        )
    }

    /// Generation events whose tokens count as test-time spend.
    pub fn is_test_generation(self) -> bool {
        matches!(self, EventKind::MainGen | EventKind::Forecast | EventKind::Revision)
    }
}

/// Reference to a draft by the step whose idle window produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DraftRef {
    pub step: u32,
    pub iteration: u32,
}

/// Kind-specific fields; absent fields are omitted from the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<DraftStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<ForecastSignal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<CallKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<Millis>,
    /// Prompt plus completion tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offered: Option<Vec<DraftRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

impl Payload {
    pub fn is_empty(&self) -> bool {
        *self == Payload::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    /// Emission order within the task.
    pub seq: u64,
    pub t_ms: Millis,
    pub policy: PolicyKind,
    pub task_id: String,
    pub step: u32,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Payload::is_empty")]
    pub payload: Payload,
}

impl TraceEvent {
    pub fn duration_ms(&self) -> Option<Millis> {
        self.payload.start_ms.map(|s| self.t_ms.saturating_sub(s))
    }
}

/// Short content digest recorded in place of raw text.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

pub trait TraceSink {
    fn record(&mut self, event: &TraceEvent) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub events: Vec<TraceEvent>,
}

impl TraceSink for MemorySink {
    fn record(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _event: &TraceEvent) -> io::Result<()> {
        Ok(())
    }
}

/// One JSON object per line.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn record(&mut self, event: &TraceEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Forwards to two sinks.
pub struct Tee<'a> {
    pub first: &'a mut dyn TraceSink,
    pub second: &'a mut dyn TraceSink,
}

impl TraceSink for Tee<'_> {
    fn record(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.first.record(event)?;
        self.second.record(event)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.first.flush()?;
        self.second.flush()
    }
}

/// Writes `fingerprint` into every TASK_START event before forwarding.
pub struct Stamp<'a> {
    pub inner: &'a mut dyn TraceSink,
    pub fingerprint: String,
}

impl TraceSink for Stamp<'_> {
    fn record(&mut self, event: &TraceEvent) -> io::Result<()> {
        if event.kind == EventKind::TaskStart {
            let mut e = event.clone();
            e.payload.fingerprint = Some(self.fingerprint.clone());
            self.inner.record(&e)
        } else {
            self.inner.record(event)
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Per-task emitter that stamps identity and sequence numbers.
pub struct Tracer<'a> {
    sink: &'a mut dyn TraceSink,
    policy: PolicyKind,
    task_id: String,
    seq: u64,
    pub full_text: bool,
}

impl<'a> Tracer<'a> {
    pub fn new(sink: &'a mut dyn TraceSink, policy: PolicyKind, task_id: impl Into<String>, full_text: bool) -> Self {
        Self {
            sink,
            policy,
            task_id: task_id.into(),
            seq: 0,
            full_text,
        }
    }

    pub fn emit(&mut self, t_ms: Millis, step: u32, kind: EventKind, payload: Payload) -> io::Result<()> {
        let event = TraceEvent {
            seq: self.seq,
            t_ms,
            policy: self.policy,
            task_id: self.task_id.clone(),
            step,
            kind,
            payload,
        };
        self.seq += 1;
        self.sink.record(&event)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.sink.flush()
    }

    /// Hash always; verbatim text only in full-text mode.
    pub fn text_fields(&self, payload: &mut Payload, prompt: Option<&str>, text: &str) {
        payload.hash = Some(content_hash(text));
        if self.full_text {
            payload.prompt = prompt.map(str::to_string);
            payload.text = Some(text.to_string());
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads JSONL events. Blank lines are skipped; any other unparsable line
/// is an error naming its 1-based line number.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_trace<W: Write>(out: W, events: &[TraceEvent]) -> io::Result<()> {
    let mut sink = JsonlSink::new(out);
    for e in events {
        sink.record(e)?;
    }
    sink.flush()
}

/// Task identity within a trace that may mix policies.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskKey {
    pub policy: PolicyKind,
    pub task_id: String,
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.policy, self.task_id)
    }
}

/// Groups events by task, keeping file order within each task.
pub fn group_by_task(events: &[TraceEvent]) -> BTreeMap<TaskKey, Vec<&TraceEvent>> {
    let mut out: BTreeMap<TaskKey, Vec<&TraceEvent>> = BTreeMap::new();
    for e in events {
        out.entry(TaskKey {
            policy: e.policy,
            task_id: e.task_id.clone(),
        })
        .or_default()
        .push(e);
    }
    out
}

fn starting_posterior(events: &[&TraceEvent]) -> StrategyPosterior {
    events
        .iter()
        .find(|e| e.kind == EventKind::TaskStart)
        .and_then(|e| StrategyPosterior::from_counts(e.payload.alpha?, e.payload.beta?))
        .unwrap_or_else(init_posterior)
}

/// Events strictly ordered by `(t_ms, seq)` within each task.
pub fn validate_order(events: &[TraceEvent]) -> Vec<String> {
    let mut out = Vec::new();
    for (key, evs) in group_by_task(events) {
        for w in evs.windows(2) {
            if w[1].seq <= w[0].seq || w[1].t_ms < w[0].t_ms {
                out.push(format!("{key}: event seq {} out of order", w[1].seq));
            }
        }
    }
    out
}

/// Every posterior update adds exactly one to the count named by its
/// signal, starting from the task's starting posterior; updates match
/// parsed forecasts one to one and never outnumber observations.
pub fn validate_posterior_increments(events: &[TraceEvent]) -> Vec<String> {
    let mut out = Vec::new();
    for (key, evs) in group_by_task(events) {
        let mut post = starting_posterior(&evs);
        let mut pending_signal: Option<ForecastSignal> = None;
        let (mut updates, mut parsed, mut observations) = (0usize, 0usize, 0usize);
        for e in &evs {
            match e.kind {
                EventKind::ToolComplete => observations += 1,
                EventKind::Forecast => {
                    pending_signal = e.payload.signal;
                    parsed += usize::from(e.payload.signal.is_some());
                }
                EventKind::PosteriorUpdate => {
                    updates += 1;
                    let Some(signal) = e.payload.signal else {
                        out.push(format!("{key}: update seq {} has no signal", e.seq));
                        continue;
                    };
                    if pending_signal.take() != Some(signal) {
                        out.push(format!("{key}: update seq {} without matching forecast", e.seq));
                    }
                    let expected = update_posterior(post, signal);
                    let got = (e.payload.alpha, e.payload.beta);
                    if got != (Some(expected.alpha), Some(expected.beta)) {
                        out.push(format!(
                            "{key}: update seq {} gives {:?}, expected ({}, {})",
                            e.seq, got, expected.alpha, expected.beta
                        ));
                    }
                    post = expected;
                }
                _ => {}
            }
        }
        if updates != parsed {
            out.push(format!("{key}: {updates} updates for {parsed} parsed forecasts"));
        }
        if updates > observations {
            out.push(format!("{key}: {updates} updates exceed {observations} observations"));
        }
    }
    out
}

/// All strategy samples in a window use the posterior in force when the
/// window opened.
pub fn validate_freeze(events: &[TraceEvent]) -> Vec<String> {
    let mut out = Vec::new();
    for (key, evs) in group_by_task(events) {
        let mut post = starting_posterior(&evs);
        for e in &evs {
            match e.kind {
                EventKind::PosteriorUpdate => {
                    if let (Some(a), Some(b)) = (e.payload.alpha, e.payload.beta) {
                        post = StrategyPosterior { alpha: a, beta: b };
                    }
                }
                EventKind::DraftStart if (e.payload.alpha, e.payload.beta) != (Some(post.alpha), Some(post.beta)) => {
                    out.push(format!(
                        "{key}: draft at step {} sampled from ({:?}, {:?}), posterior is ({}, {})",
                        e.step, e.payload.alpha, e.payload.beta, post.alpha, post.beta
                    ));
                }
                _ => {}
            }
        }
    }
    out
}

/// A main generation at step i is offered only drafts completed in step
/// i-1's idle window.
pub fn validate_clear(events: &[TraceEvent]) -> Vec<String> {
    let mut out = Vec::new();
    for (key, evs) in group_by_task(events) {
        let mut completed: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for e in &evs {
            match e.kind {
                EventKind::DraftComplete => {
                    completed.entry(e.step).or_default().push(e.payload.iteration.unwrap_or(u32::MAX));
                }
                EventKind::MainGen => {
                    for r in e.payload.offered.iter().flatten() {
                        let known = completed.get(&r.step).is_some_and(|its| its.contains(&r.iteration));
                        if r.step + 1 != e.step || !known {
                            out.push(format!(
                                "{key}: main at step {} offered draft {}:{}",
                                e.step, r.step, r.iteration
                            ));
                        }
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Rendered actions per task, in execution order.
pub fn action_sequences(events: &[TraceEvent]) -> BTreeMap<TaskKey, Vec<String>> {
    group_by_task(events)
        .into_iter()
        .map(|(k, evs)| {
            let actions = evs
                .iter()
                .filter(|e| e.kind == EventKind::ToolStart)
                .filter_map(|e| e.payload.action.clone())
                .collect();
            (k, actions)
        })
        .collect()
}
