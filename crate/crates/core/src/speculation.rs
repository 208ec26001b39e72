//! Idle-time drafting, forecast extraction and aggregation prompts.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{sample_preference, select_strategy, ForecastSignal, StrategyPosterior};
use crate::clock::{Clock, Signal};
use crate::model::{CallKind, Decoding, GenerationRequest, ModelClient};
use crate::prompts::{self, PromptContext, PromptTemplate, TemplateName};
use crate::types::{Draft, DraftBuffer, DraftStatus, DraftStrategy, Millis, Observation};

fn fill(name: TemplateName, mut values: BTreeMap<&'static str, String>, extra: &[(&'static str, String)]) -> String {
    for (k, v) in extra {
        values.insert(k, v.clone());
    }
    PromptTemplate::builtin(name)
        .render(&values)
        .expect("builtin templates are validated")
}

fn plan_history(history: &DraftBuffer) -> String {
    history
        .drafts()
        .iter()
        .map(|d| d.content.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_draft_prompt(strategy: DraftStrategy, history: &DraftBuffer, ctx: &PromptContext<'_>) -> String {
    let name = match strategy {
        DraftStrategy::Prog => TemplateName::Progressive,
        DraftStrategy::Rec => TemplateName::Recovery,
    };
    fill(name, ctx.values(), &[("plan_history", plan_history(history))])
}

/// The plain next-step prompt used when no drafts are available.
pub fn build_vanilla_prompt(ctx: &PromptContext<'_>) -> String {
    prompts::render(prompts::MAIN, &ctx.values()).expect("main template placeholders")
}

/// Next-step prompt with the buffered drafts appended as numbered plans.
/// An empty buffer yields the vanilla prompt unchanged. The observation is
/// the one recorded on the last trajectory step.
pub fn build_aggregation_prompt(buffer: &DraftBuffer, ctx: &PromptContext<'_>) -> String {
    let vanilla = build_vanilla_prompt(ctx);
    if buffer.is_empty() {
        return vanilla;
    }
    let candidates = buffer
        .drafts()
        .iter()
        .enumerate()
        .map(|(i, d)| format!("Plan {}: {}", i + 1, d.content))
        .collect::<Vec<_>>()
        .join("\n");
    let block = fill(TemplateName::Aggregation, BTreeMap::new(), &[("candidates", candidates)]);
    format!("{vanilla}\n{block}")
}

/// `ctx.pending_action` should hold the action that produced `observation`.
pub fn build_forecast_prompt(ctx: &PromptContext<'_>, observation: &Observation) -> String {
    fill(TemplateName::Forecast, ctx.values(), &[("observation", observation.content.clone())])
}

pub fn build_revision_prompt(ctx: &PromptContext<'_>, observation: &Observation) -> String {
    fill(TemplateName::Seqrev, ctx.values(), &[("observation", observation.content.clone())])
}

pub fn build_planning_prompt(ctx: &PromptContext<'_>, observation: &Observation) -> String {
    let mut values = ctx.values();
    values.insert("observation", observation.content.clone());
    prompts::render(prompts::PLANNING, &values).expect("planning template placeholders")
}

pub fn build_sleeptime_prompt(ctx: &PromptContext<'_>) -> String {
    fill(TemplateName::Sleeptime, ctx.values(), &[])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("forecast output names neither strategy unambiguously: {0:?}")]
pub struct ForecastParseError(pub String);

fn label_in(text: &str) -> Option<ForecastSignal> {
    let prog = text.find("progressive");
    let rec = text.find("recovery");
    match (prog, rec) {
        (Some(_), None) => Some(ForecastSignal::Prog),
        (None, Some(_)) => Some(ForecastSignal::Rec),
        _ => None,
    }
}

/// Case-insensitive. A `Decision:` line takes precedence; otherwise exactly
/// one of the two labels must appear.
pub fn parse_forecast(model_output: &str) -> Result<ForecastSignal, ForecastParseError> {
    let lower = model_output.to_lowercase();
    if let Some(pos) = lower.rfind("decision:") {
        let line = lower[pos + "decision:".len()..].lines().next().unwrap_or("");
        if let Some(sig) = label_in(line) {
            return Ok(sig);
        }
    }
    label_in(&lower).ok_or_else(|| ForecastParseError(model_output.chars().take(200).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftOutcome {
    Complete,
    Cancelled,
    Failed,
    /// Completed after the buffer had no room. Unreachable while the loop
    /// stops at the cap; kept so records stay total.
    Dropped,
}

/// One draft generation attempt, for tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftRecord {
    pub iteration: u32,
    pub strategy: DraftStrategy,
    pub p_hat: f64,
    pub start_ms: Millis,
    pub end_ms: Millis,
    pub outcome: DraftOutcome,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
    pub prompt: String,
    pub content: String,
}

impl DraftRecord {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DraftingConfig {
    pub decoding: Decoding,
    /// Extra attempts for a failed draft before the iteration is skipped.
    pub retries_per_iteration: u32,
    /// Skipped iterations tolerated per window before drafting gives up.
    pub failed_iteration_budget: u32,
}

impl Default for DraftingConfig {
    fn default() -> Self {
        Self {
            decoding: Decoding::default(),
            retries_per_iteration: 1,
            failed_iteration_budget: 3,
        }
    }
}

/// Drafting state for one idle window.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftingSession {
    pub step_index: u32,
    posterior_snapshot: StrategyPosterior,
    pub buffer: DraftBuffer,
    pub cancelled_partial: Option<Draft>,
    pub busy_intervals: Vec<(Millis, Millis)>,
    pub records: Vec<DraftRecord>,
}

impl DraftingSession {
    pub fn new(step_index: u32, posterior: StrategyPosterior, cap: usize) -> Self {
        Self {
            step_index,
            posterior_snapshot: posterior,
            buffer: DraftBuffer::new(cap),
            cancelled_partial: None,
            busy_intervals: Vec::new(),
            records: Vec::new(),
        }
    }

    /// The posterior every sample in this window is drawn from.
    pub fn posterior_snapshot(&self) -> StrategyPosterior {
        self.posterior_snapshot
    }

    pub fn complete_count(&self) -> usize {
        self.buffer.len()
    }
}

/// Drafts until `arrival` fires, the buffer is full, or the failure budget
/// is spent. One generation is in flight at a time and each prompt sees all
/// earlier drafts. On arrival the in-flight generation is aborted and kept
/// as the cancelled partial.
pub fn run_idle_drafting(
    mut session: DraftingSession,
    model: &dyn ModelClient,
    ctx: &PromptContext<'_>,
    arrival: &Signal,
    rng: &mut ChaCha8Rng,
    clock: &dyn Clock,
    cfg: &DraftingConfig,
) -> DraftingSession {
    let mut iteration = 0u32;
    let mut failed_iterations = 0u32;
    while !session.buffer.is_full() && failed_iterations < cfg.failed_iteration_budget {
        if clock.poll(arrival) {
            break;
        }
        let sample = sample_preference(&session.posterior_snapshot, rng);
        let strategy = select_strategy(&sample);
        let prompt = build_draft_prompt(strategy, &session.buffer, ctx);
        let req = GenerationRequest::with_decoding(CallKind::Draft, prompt.clone(), cfg.decoding);
        let mut attempts = 0;
        loop {
            let start = clock.now_ms();
            let outcome = model.generate(&req, Some(arrival), clock);
            let end = clock.now_ms();
            let mut record = DraftRecord {
                iteration,
                strategy,
                p_hat: sample.p_hat,
                start_ms: start,
                end_ms: end,
                outcome: DraftOutcome::Failed,
                prompt_tokens: 0,
                completion_tokens: 0,
                estimated: false,
                prompt: prompt.clone(),
                content: String::new(),
            };
            match outcome {
                Ok(res) => {
                    record.end_ms = start + res.duration_ms;
                    record.prompt_tokens = res.prompt_tokens;
                    record.completion_tokens = res.completion_tokens;
                    record.estimated = res.tokens_estimated;
                    record.content = res.content.clone();
                    let draft = Draft {
                        strategy,
                        content: res.content,
                        iteration,
                        status: if res.aborted {
                            DraftStatus::Cancelled
                        } else {
                            DraftStatus::Complete
                        },
                        token_count: res.prompt_tokens + res.completion_tokens,
                        step_index: session.step_index,
                    };
                    session.busy_intervals.push((start, record.end_ms));
                    if res.aborted {
                        record.outcome = DraftOutcome::Cancelled;
                        session.records.push(record);
                        session.cancelled_partial = Some(draft);
                        return session;
                    }
                    record.outcome = match session.buffer.push(draft) {
                        Ok(()) => DraftOutcome::Complete,
                        Err(_) => DraftOutcome::Dropped,
                    };
                    session.records.push(record);
                    break;
                }
                Err(_) => {
                    if end > start {
                        session.busy_intervals.push((start, end));
                    }
                    session.records.push(record);
                    if arrival.is_fired() {
                        return session;
                    }
                    attempts += 1;
                    if attempts > cfg.retries_per_iteration {
                        failed_iterations += 1;
                        break;
                    }
                }
            }
        }
        iteration += 1;
    }
    session
}

/// The completed drafts in creation order.
pub fn finalize_drafts(session: &DraftingSession) -> DraftBuffer {
    let kept = session
        .buffer
        .drafts()
        .iter()
        .filter(|d| d.status == DraftStatus::Complete)
        .cloned()
        .collect();
    DraftBuffer::from_parts_unchecked(kept, session.buffer.cap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::model::{RuleMatch, ScriptedClient, ScriptedPolicy, ScriptedRule};
    use crate::types::{Task, ToolCall, TrajectoryState};
    use rand::SeedableRng;

    fn draft(i: u32, content: &str) -> Draft {
        Draft {
            strategy: DraftStrategy::Prog,
            content: content.into(),
            iteration: i,
            status: DraftStatus::Complete,
            token_count: 1,
            step_index: 0,
        }
    }

    fn buffer(contents: &[&str]) -> DraftBuffer {
        let mut b = DraftBuffer::default();
        for (i, c) in contents.iter().enumerate() {
            b.push(draft(i as u32, c)).unwrap();
        }
        b
    }

    fn drafting_model(latency: Millis) -> ScriptedClient {
        ScriptedClient::new(ScriptedPolicy::new(ScriptedRule::new(
            RuleMatch::kind(CallKind::Draft),
            "draft plan",
            latency,
        )))
    }

    fn run(tool_ms: Millis, draft_ms: Millis) -> DraftingSession {
        let clock = VirtualClock::new();
        let task = Task::new("t", "q");
        let state = TrajectoryState::new("t");
        let call = ToolCall::new("lookup", "c");
        let ctx = PromptContext::new(&task, &state).pending(&call);
        let arrival = clock.schedule(tool_ms);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let session = DraftingSession::new(0, StrategyPosterior::default(), 5);
        run_idle_drafting(
            session,
            &drafting_model(draft_ms),
            &ctx,
            &arrival,
            &mut rng,
            &clock,
            &DraftingConfig::default(),
        )
    }

    #[test]
    fn progressive_prompt_with_empty_history() {
        let task = Task::new("t", "q");
        let state = TrajectoryState::new("t");
        let text = build_draft_prompt(DraftStrategy::Prog, &DraftBuffer::default(), &PromptContext::new(&task, &state));
        assert!(text.contains("NEXT ACTION STEP"));
        assert!(text.contains("Plan history: []"));
    }

    #[test]
    fn recovery_prompt_lists_history_in_order() {
        let task = Task::new("t", "q");
        let state = TrajectoryState::new("t");
        let ctx = PromptContext::new(&task, &state);
        let text = build_draft_prompt(DraftStrategy::Rec, &buffer(&["first", "second"]), &ctx);
        assert!(text.contains("EXACTLY one distinct recovery plan"));
        assert!(text.contains("Plan history: [first, second]"));
        assert_eq!(text, build_draft_prompt(DraftStrategy::Rec, &buffer(&["first", "second"]), &ctx));
    }

    #[test]
    fn aggregation_enumerates_plans() {
        let task = Task::new("t", "q");
        let state = TrajectoryState::new("t");
        let ctx = PromptContext::new(&task, &state);
        let text = build_aggregation_prompt(&buffer(&["a", "b"]), &ctx);
        assert!(text.contains("Plan 1: a") && text.contains("Plan 2: b"));
        assert!(!text.contains("Plan 3:"));
        assert!(text.contains("you may use these plans as starting points"));
        assert_eq!(build_aggregation_prompt(&DraftBuffer::default(), &ctx), build_vanilla_prompt(&ctx));
        let five = build_aggregation_prompt(&buffer(&["1", "2", "3", "4", "5"]), &ctx);
        assert!(five.contains("Plan 5: 5") && !five.contains("Plan 6:"));
    }

    #[test]
    fn forecast_prompt_has_both_semantics() {
        let task = Task::new("t", "q");
        let state = TrajectoryState::new("t");
        let obs = Observation {
            call_id: "c".into(),
            content: "result".into(),
            arrived_at: 0,
            success_flag: true,
        };
        let ctx = PromptContext::new(&task, &state);
        let text = build_forecast_prompt(&ctx, &obs);
        assert!(text.contains("PROGRESSIVE:") && text.contains("RECOVERY:"));
        assert!(text.contains("Trajectory:\n\n"));
        assert_eq!(text, build_forecast_prompt(&ctx, &obs));
    }

    #[test]
    fn forecast_parsing() {
        assert_eq!(parse_forecast("Decision: PROGRESSIVE"), Ok(ForecastSignal::Prog));
        assert_eq!(parse_forecast("recovery"), Ok(ForecastSignal::Rec));
        assert!(parse_forecast("I am not sure").is_err());
        assert!(parse_forecast("PROGRESSIVE or RECOVERY?").is_err());
        assert_eq!(
            parse_forecast("Weighing PROGRESSIVE against RECOVERY.\nDecision: Recovery"),
            Ok(ForecastSignal::Rec)
        );
    }

    #[test]
    fn three_complete_and_one_cancelled() {
        let s = run(10_000, 3000);
        assert_eq!(s.complete_count(), 3);
        let partial = s.cancelled_partial.as_ref().unwrap();
        assert_eq!(partial.status, DraftStatus::Cancelled);
        assert_eq!(s.busy_intervals.last(), Some(&(9000, 10_000)));
        assert_eq!(finalize_drafts(&s).len(), 3);
    }

    #[test]
    fn cap_stops_drafting() {
        let s = run(100_000, 3000);
        assert_eq!(s.complete_count(), 5);
        assert!(s.cancelled_partial.is_none());
        assert_eq!(s.records.len(), 5);
    }

    #[test]
    fn short_tool_gives_only_partial() {
        let s = run(500, 3000);
        assert_eq!(s.complete_count(), 0);
        assert!(s.cancelled_partial.is_some());
        assert!(finalize_drafts(&s).is_empty());
    }

    #[test]
    fn exact_multiple_has_no_partial() {
        let s = run(6000, 3000);
        assert_eq!(s.complete_count(), 2);
        assert!(s.cancelled_partial.is_none());
        let s0 = run(0, 3000);
        assert_eq!(s0.complete_count(), 0);
        assert!(s0.records.is_empty());
    }

    #[test]
    fn finalize_is_idempotent() {
        let s = run(10_000, 3000);
        assert_eq!(finalize_drafts(&s), finalize_drafts(&s));
    }

    #[test]
    fn failing_drafts_are_bounded() {
        let clock = VirtualClock::new();
        let task = Task::new("t", "q");
        let state = TrajectoryState::new("t");
        let ctx = PromptContext::new(&task, &state);
        let arrival = clock.schedule(1_000_000);
        let model = ScriptedClient::new(ScriptedPolicy::new(
            ScriptedRule::new(RuleMatch::kind(CallKind::Draft), "x", 100).failing(),
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = DraftingConfig::default();
        let s = run_idle_drafting(DraftingSession::new(0, StrategyPosterior::default(), 5), &model, &ctx, &arrival, &mut rng, &clock, &cfg);
        assert_eq!(s.complete_count(), 0);
        // (1 + retries) attempts per failed iteration
        assert_eq!(s.records.len() as u32, cfg.failed_iteration_budget * (1 + cfg.retries_per_iteration));
        assert!(s.records.iter().all(|r| r.outcome == DraftOutcome::Failed));
    }
}
