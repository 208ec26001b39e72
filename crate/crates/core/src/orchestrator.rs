//! The agent loop and its five policies.
//!
//! Every policy runs the same reason → act → observe cycle. They differ in
//! what happens while the tool runs and right after its observation:
//!
//! | policy    | during the tool call        | after the observation      |
//! |-----------|-----------------------------|----------------------------|
//! | VANILLA   | nothing                     | nothing                    |
//! | IDLESPEC  | iterative drafting          | forecast, posterior update |
//! | SLEEPTIME | one pre-computation         | nothing                    |
//! | SEQREV    | nothing                     | one revision generation    |
//! | PLANNING  | nothing                     | one planning generation    |

use std::fmt;
use std::io;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{init_posterior, update_posterior, StrategyPosterior};
use crate::clock::Clock;
use crate::metrics::{clip_intervals, TaskTally};
use crate::model::{CallKind, Decoding, GenerationRequest, GenerationResult, ModelClient, ModelError};
use crate::prompts::PromptContext;
use crate::speculation::{
    build_aggregation_prompt, build_forecast_prompt, build_planning_prompt, build_revision_prompt,
    build_sleeptime_prompt, build_vanilla_prompt, finalize_drafts, parse_forecast, run_idle_drafting,
    DraftOutcome, DraftingConfig, DraftingSession,
};
use crate::tools::{ToolRegistry, FINAL_ANSWER_TOOL};
use crate::trace::{DraftRef, EventKind, Payload, TraceSink, Tracer};
use crate::types::{
    DraftBuffer, IdleWindow, Millis, StepTiming, StopReason, Task, ToolCall, TrajectoryState, TrajectoryStep,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PolicyKind {
    Idlespec,
    Vanilla,
    Seqrev,
    Sleeptime,
    Planning,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Idlespec,
        PolicyKind::Vanilla,
        PolicyKind::Seqrev,
        PolicyKind::Sleeptime,
        PolicyKind::Planning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Idlespec => "IDLESPEC",
            PolicyKind::Vanilla => "VANILLA",
            PolicyKind::Seqrev => "SEQREV",
            PolicyKind::Sleeptime => "SLEEPTIME",
            PolicyKind::Planning => "PLANNING",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL
            .iter()
            .map(|p| p.as_str().to_lowercase())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown policy '{s}' (valid: {})", Self::valid_names()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Draft buffer capacity.
    pub k_cap: usize,
    pub prior: StrategyPosterior,
    pub max_steps: u32,
    /// Carry the posterior from one task to the next instead of resetting.
    pub persist_posterior: bool,
    pub draft_retries: u32,
    pub failed_draft_budget: u32,
    pub main_retries: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Idlespec,
            k_cap: crate::types::DEFAULT_DRAFT_CAP,
            prior: init_posterior(),
            max_steps: 20,
            persist_posterior: false,
            draft_retries: 1,
            failed_draft_budget: 3,
            main_retries: 1,
        }
    }
}

impl PolicyConfig {
    pub fn with_kind(kind: PolicyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k_cap == 0 {
            return Err("policy.k_cap must be at least 1".into());
        }
        if self.max_steps == 0 {
            return Err("policy.max_steps must be at least 1".into());
        }
        if self.prior.alpha == 0 || self.prior.beta == 0 {
            return Err("policy.prior counts must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-task run settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub decoding: Decoding,
    pub log_full_text: bool,
}

impl RunConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            policy: PolicyConfig::with_kind(kind),
            ..Self::default()
        }
    }
}

/// The substrate a task runs on.
pub struct TaskEnv<'a> {
    pub model: &'a dyn ModelClient,
    pub tools: &'a ToolRegistry,
    pub clock: &'a dyn Clock,
    pub bandit_rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid task: {}", .0.join("; "))]
    InvalidTask(Vec<String>),
    #[error("trace write failed: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRun {
    pub state: TrajectoryState,
    pub windows: Vec<IdleWindow>,
    /// Finalized draft buffer of each idle window.
    pub buffers: Vec<DraftBuffer>,
    pub tally: TaskTally,
    /// Posterior at the end of the task.
    pub posterior: StrategyPosterior,
}

/// Splits model output into a thought and an action. Output without an
/// `Action:` line is taken as the final answer.
pub fn parse_action(content: &str, call_id: &str) -> (String, ToolCall) {
    let mut thought = String::new();
    let mut action_line = None;
    for line in content.lines() {
        let l = line.trim();
        if let Some(rest) = l.strip_prefix("Thought:") {
            thought = rest.trim().to_string();
        } else if let Some(rest) = l.strip_prefix("Action:") {
            action_line = Some(rest.trim());
        }
    }
    let Some(action) = action_line.filter(|a| !a.is_empty()) else {
        let call = ToolCall::new(FINAL_ANSWER_TOOL, call_id).arg("answer", content.trim());
        return (thought, call);
    };
    let (name, rest) = match action.split_once(char::is_whitespace) {
        Some((n, r)) => (n, r.trim()),
        None => (action, ""),
    };
    let mut call = ToolCall::new(name, call_id);
    if !rest.is_empty() {
        match serde_json::from_str::<serde_json::Value>(rest) {
            Ok(serde_json::Value::Object(map)) => {
                for (k, v) in map {
                    let v = match v {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    call.arguments.insert(k, v);
                }
            }
            _ => {
                call.arguments.insert("input".into(), rest.to_string());
            }
        }
    }
    (thought, call)
}

struct Gen {
    start: Millis,
    end: Millis,
    result: Result<GenerationResult, ModelError>,
}

fn generate(env: &TaskEnv<'_>, kind: CallKind, prompt: &str, decoding: Decoding) -> Gen {
    let req = GenerationRequest::with_decoding(kind, prompt, decoding);
    let start = env.clock.now_ms();
    let result = env.model.generate(&req, None, env.clock);
    Gen {
        start,
        end: env.clock.now_ms(),
        result,
    }
}

fn generation_payload(tr: &Tracer<'_>, g: &Gen, kind: CallKind, prompt: &str) -> Payload {
    let mut p = Payload {
        call: Some(kind),
        start_ms: Some(g.start),
        ..Payload::default()
    };
    match &g.result {
        Ok(r) => {
            p.tokens = Some(r.prompt_tokens + r.completion_tokens);
            p.estimated = Some(r.tokens_estimated);
            tr.text_fields(&mut p, Some(prompt), &r.content);
        }
        Err(e) => p.error = Some(e.to_string()),
    }
    p
}

fn tokens_of(g: &Gen) -> u64 {
    g.result
        .as_ref()
        .map(|r| r.prompt_tokens + r.completion_tokens)
        .unwrap_or(0)
}

/// Runs one task to completion under `cfg.policy`.
pub fn run_task(
    task: &Task,
    cfg: &RunConfig,
    env: TaskEnv<'_>,
    start_posterior: StrategyPosterior,
    sink: &mut dyn TraceSink,
) -> Result<TaskRun, RunError> {
    cfg.policy.validate().map_err(RunError::InvalidConfig)?;
    let problems = task.validate();
    if !problems.is_empty() {
        return Err(RunError::InvalidTask(problems));
    }
    let policy = cfg.policy.kind;
    let k_cap = cfg.policy.k_cap;
    let clock = env.clock;
    let tool_names: Vec<String> = env.tools.list_tools().into_iter().map(str::to_string).collect();
    let drafting = DraftingConfig {
        decoding: cfg.decoding,
        retries_per_iteration: cfg.policy.draft_retries,
        failed_iteration_budget: cfg.policy.failed_draft_budget,
    };

    let mut tr = Tracer::new(sink, policy, &task.id, cfg.log_full_text);
    let t0 = clock.now_ms();
    let mut post = start_posterior;
    let mut start_payload = Payload {
        alpha: Some(post.alpha),
        beta: Some(post.beta),
        ..Payload::default()
    };
    tr.text_fields(&mut start_payload, None, &task.prompt);
    tr.emit(t0, 0, EventKind::TaskStart, start_payload)?;

    let mut state = TrajectoryState::new(&task.id);
    let mut tally = TaskTally {
        task_id: task.id.clone(),
        policy: Some(policy),
        ..TaskTally::default()
    };
    let mut windows = Vec::new();
    let mut buffers = Vec::new();
    let mut buffer = DraftBuffer::new(k_cap);
    let mut last_step = 0;

    for step in 0..cfg.policy.max_steps {
        last_step = step;
        tr.emit(clock.now_ms(), step, EventKind::StepStart, Payload::default())?;

        // reason, with last window's drafts; the buffer is cleared here
        let offered = std::mem::replace(&mut buffer, DraftBuffer::new(k_cap));
        let refs: Vec<DraftRef> = offered
            .drafts()
            .iter()
            .map(|d| DraftRef {
                step: d.step_index,
                iteration: d.iteration,
            })
            .collect();
        let (kind, prompt) = {
            let ctx = PromptContext::new(task, &state).with_tools(&tool_names);
            if offered.is_empty() {
                (CallKind::Main, build_vanilla_prompt(&ctx))
            } else {
                (CallKind::Aggregate, build_aggregation_prompt(&offered, &ctx))
            }
        };
        let reason_start = clock.now_ms();
        if !offered.is_empty() {
            let p = Payload {
                plans: Some(offered.len() as u32),
                offered: Some(refs.clone()),
                ..Payload::default()
            };
            tr.emit(reason_start, step, EventKind::Aggregate, p)?;
        }
        let mut content = None;
        for _ in 0..=cfg.policy.main_retries {
            let g = generate(&env, kind, &prompt, cfg.decoding);
            let mut p = generation_payload(&tr, &g, kind, &prompt);
            p.offered = (!refs.is_empty()).then(|| refs.clone());
            tr.emit(g.end, step, EventKind::MainGen, p)?;
            tally.reasoning_ms += g.end - g.start;
            tally.tokens_test += tokens_of(&g);
            if let Ok(r) = g.result {
                tally.main_durations.push(g.end - g.start);
                content = Some(r.content);
                break;
            }
        }
        let Some(content) = content else {
            state.finish(StopReason::ModelFailure, None);
            break;
        };
        let reason_end = clock.now_ms();
        let (thought, action) = parse_action(&content, &format!("{}-{step}", task.id));

        // act, using the idle time as the policy allows
        let tool_start = clock.now_ms();
        let p = Payload {
            action: Some(action.render()),
            ..Payload::default()
        };
        tr.emit(tool_start, step, EventKind::ToolStart, p)?;
        let pending = env.tools.start(&action, clock);
        let mut busy = Vec::new();
        let mut notes = Vec::new();
        let mut sleep_event: Option<(Millis, Payload)> = None;
        match policy {
            PolicyKind::Idlespec => {
                let ctx = PromptContext::new(task, &state)
                    .with_tools(&tool_names)
                    .pending(&action);
                let session = run_idle_drafting(
                    DraftingSession::new(step, post, k_cap),
                    env.model,
                    &ctx,
                    &pending.completion,
                    &mut *env.bandit_rng,
                    clock,
                    &drafting,
                );
                for rec in &session.records {
                    let start = Payload {
                        strategy: Some(rec.strategy),
                        iteration: Some(rec.iteration),
                        p_hat: Some(rec.p_hat),
                        alpha: Some(post.alpha),
                        beta: Some(post.beta),
                        ..Payload::default()
                    };
                    tr.emit(rec.start_ms, step, EventKind::DraftStart, start)?;
                    let kind = match rec.outcome {
                        DraftOutcome::Complete | DraftOutcome::Dropped => EventKind::DraftComplete,
                        DraftOutcome::Cancelled => EventKind::DraftCancelled,
                        DraftOutcome::Failed => EventKind::DraftFailed,
                    };
                    let mut end = Payload {
                        strategy: Some(rec.strategy),
                        iteration: Some(rec.iteration),
                        call: Some(CallKind::Draft),
                        start_ms: Some(rec.start_ms),
                        tokens: Some(rec.tokens()),
                        estimated: Some(rec.estimated),
                        ..Payload::default()
                    };
                    if rec.outcome == DraftOutcome::Failed {
                        end.error = Some("draft generation failed".into());
                    } else {
                        tr.text_fields(&mut end, Some(&rec.prompt), &rec.content);
                    }
                    tr.emit(rec.end_ms, step, kind, end)?;
                    tally.tokens_idle += rec.tokens();
                }
                busy = session.busy_intervals.clone();
                buffer = finalize_drafts(&session);
                buffers.push(buffer.clone());
            }
            PolicyKind::Sleeptime => {
                let prompt = {
                    let ctx = PromptContext::new(task, &state)
                        .with_tools(&tool_names)
                        .pending(&action);
                    build_sleeptime_prompt(&ctx)
                };
                let p = Payload {
                    purpose: Some("sleeptime".into()),
                    ..Payload::default()
                };
                tr.emit(tool_start, step, EventKind::SleepStart, p)?;
                let g = generate(&env, CallKind::Draft, &prompt, cfg.decoding);
                let mut p = generation_payload(&tr, &g, CallKind::Draft, &prompt);
                p.purpose = Some("sleeptime".into());
                tally.tokens_idle += tokens_of(&g);
                if g.end > g.start {
                    busy.push((g.start, g.end));
                }
                if let Ok(r) = &g.result {
                    notes.push(r.content.clone());
                }
                sleep_event = Some((g.end, p));
            }
            _ => {}
        }

        let observation = pending.wait(clock);
        let tool_end = observation.arrived_at;
        let mut obs_payload = Payload {
            start_ms: Some(tool_start),
            success: Some(observation.success_flag),
            ..Payload::default()
        };
        tr.text_fields(&mut obs_payload, None, &observation.content);
        match sleep_event {
            Some((sleep_end, p)) if sleep_end <= tool_end => {
                tr.emit(sleep_end, step, EventKind::SleepComplete, p)?;
                tr.emit(tool_end, step, EventKind::ToolComplete, obs_payload)?;
            }
            Some((sleep_end, p)) => {
                tr.emit(tool_end, step, EventKind::ToolComplete, obs_payload)?;
                tr.emit(sleep_end, step, EventKind::SleepComplete, p)?;
            }
            None => tr.emit(tool_end, step, EventKind::ToolComplete, obs_payload)?,
        }
        windows.push(IdleWindow {
            step_index: step,
            start_ms: tool_start,
            idle_duration_ms: tool_end - tool_start,
            model_busy_intervals: clip_intervals(&busy, tool_start, tool_end),
        });

        // observe
        if policy == PolicyKind::Idlespec {
            let prompt = {
                let ctx = PromptContext::new(task, &state)
                    .with_tools(&tool_names)
                    .pending(&action);
                build_forecast_prompt(&ctx, &observation)
            };
            let g = generate(&env, CallKind::Forecast, &prompt, cfg.decoding);
            let mut p = generation_payload(&tr, &g, CallKind::Forecast, &prompt);
            tally.reasoning_ms += g.end - g.start;
            tally.tokens_test += tokens_of(&g);
            let signal = match &g.result {
                Ok(r) => match parse_forecast(&r.content) {
                    Ok(sig) => Some(sig),
                    Err(e) => {
                        p.error = Some(e.to_string());
                        None
                    }
                },
                Err(_) => None,
            };
            p.signal = signal;
            tr.emit(g.end, step, EventKind::Forecast, p)?;
            if let Some(sig) = signal {
                post = update_posterior(post, sig);
                let p = Payload {
                    signal: Some(sig),
                    alpha: Some(post.alpha),
                    beta: Some(post.beta),
                    ..Payload::default()
                };
                tr.emit(g.end, step, EventKind::PosteriorUpdate, p)?;
            }
        }
        let is_final = action.tool_name == FINAL_ANSWER_TOOL;
        let answer = action
            .arguments
            .get("answer")
            .cloned()
            .unwrap_or_else(|| observation.content.clone());
        state.steps.push(TrajectoryStep {
            index: step,
            thought,
            action,
            observation: Some(observation.clone()),
            drafts_offered: offered.drafts().to_vec(),
            timing: StepTiming {
                reason_start,
                reason_end,
                tool_start,
                tool_end,
                aggregation_duration: 0,
            },
            notes,
        });
        if matches!(policy, PolicyKind::Seqrev | PolicyKind::Planning) {
            let (prompt, purpose) = {
                let ctx = PromptContext::new(task, &state).with_tools(&tool_names);
                if policy == PolicyKind::Seqrev {
                    (build_revision_prompt(&ctx, &observation), "revision")
                } else {
                    (build_planning_prompt(&ctx, &observation), "planning")
                }
            };
            let g = generate(&env, CallKind::Main, &prompt, cfg.decoding);
            let mut p = generation_payload(&tr, &g, CallKind::Main, &prompt);
            p.purpose = Some(purpose.into());
            tr.emit(g.end, step, EventKind::Revision, p)?;
            tally.reasoning_ms += g.end - g.start;
            tally.tokens_test += tokens_of(&g);
            if let Ok(r) = g.result {
                if let Some(last) = state.steps.last_mut() {
                    last.notes.push(r.content);
                }
            }
        }
        if is_final {
            let p = Payload {
                answer: Some(answer.clone()),
                ..Payload::default()
            };
            tr.emit(clock.now_ms(), step, EventKind::FinalAnswer, p)?;
            state.finish(StopReason::FinalAnswer, Some(answer));
            break;
        }
    }
    if !state.finished {
        state.finish(StopReason::MaxSteps, None);
    }
    let success = match (&state.final_answer, &task.gold_answer) {
        (Some(a), Some(gold)) => a.trim() == gold.trim(),
        (Some(_), None) => true,
        (None, _) => false,
    };
    let t_end = clock.now_ms();
    tally.success = success;
    tally.wall_ms = t_end - t0;
    tally.windows = windows.clone();
    let p = Payload {
        success: Some(success),
        answer: state.final_answer.clone(),
        ..Payload::default()
    };
    tr.emit(t_end, last_step, EventKind::TaskEnd, p)?;
    tr.flush()?;
    Ok(TaskRun {
        state,
        windows,
        buffers,
        tally,
        posterior: post,
    })
}
