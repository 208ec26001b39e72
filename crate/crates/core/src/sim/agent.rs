//! Deterministic stand-in for an LLM on the synthetic worlds.
//!
//! The agent reads only the prompt text, the same interface a live model
//! gets. One rule links drafts to outcomes: at a dead end, a plan offered in
//! the aggregation block that names the fork's other branch is followed
//! immediately. Without it the agent retries the dead key once before
//! switching. This rule is a synthetic mechanism for measuring the effect of
//! drafts, not a claim about real models.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Signal};
use crate::model::{count_tokens, simulate_generation, CallKind, GenerationRequest, GenerationResult, ModelClient, ModelError};
use crate::prompts::TemplateName;
use crate::tools::{LatencyError, LatencyModel, FINAL_ANSWER_TOOL};
use crate::types::{Millis, ToolCall};

use super::world::LOOKUP_TOOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Main,
    Progressive,
    Recovery,
    Forecast,
    Revision,
    Planning,
    Sleeptime,
}

impl Purpose {
    pub const ALL: [Purpose; 7] = [
        Purpose::Main,
        Purpose::Progressive,
        Purpose::Recovery,
        Purpose::Forecast,
        Purpose::Revision,
        Purpose::Planning,
        Purpose::Sleeptime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Main => "main",
            Purpose::Progressive => "progressive",
            Purpose::Recovery => "recovery",
            Purpose::Forecast => "forecast",
            Purpose::Revision => "revision",
            Purpose::Planning => "planning",
            Purpose::Sleeptime => "sleeptime",
        }
    }

    /// Classifies a request by call kind and template anchor.
    pub fn of(req: &GenerationRequest) -> Self {
        let text = req.text();
        match req.call_kind {
            CallKind::Forecast => Purpose::Forecast,
            CallKind::Draft => {
                if text.contains(TemplateName::Sleeptime.anchor()) {
                    Purpose::Sleeptime
                } else if text.contains(TemplateName::Recovery.anchor()) {
                    Purpose::Recovery
                } else {
                    Purpose::Progressive
                }
            }
            CallKind::Main | CallKind::Aggregate => {
                if text.contains(TemplateName::Seqrev.anchor()) {
                    Purpose::Revision
                } else if text.contains(PLANNING_ANCHOR) {
                    Purpose::Planning
                } else {
                    Purpose::Main
                }
            }
        }
    }
}

const PLANNING_ANCHOR: &str = "write a short plan for the remaining steps";

/// Latency per purpose. Both drafting strategies share `draft`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentLatencies {
    pub main: LatencyModel,
    pub draft: LatencyModel,
    pub forecast: LatencyModel,
    pub revision: LatencyModel,
    pub planning: LatencyModel,
    pub sleeptime: LatencyModel,
}

impl Default for AgentLatencies {
    fn default() -> Self {
        Self {
            main: LatencyModel::constant(2000),
            draft: LatencyModel::constant(3000),
            forecast: LatencyModel::constant(500),
            revision: LatencyModel::constant(2000),
            planning: LatencyModel::constant(2000),
            sleeptime: LatencyModel::constant(3000),
        }
    }
}

impl AgentLatencies {
    pub fn for_purpose(&self, p: Purpose) -> &LatencyModel {
        match p {
            Purpose::Main => &self.main,
            Purpose::Progressive | Purpose::Recovery => &self.draft,
            Purpose::Forecast => &self.forecast,
            Purpose::Revision => &self.revision,
            Purpose::Planning => &self.planning,
            Purpose::Sleeptime => &self.sleeptime,
        }
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        for p in Purpose::ALL {
            self.for_purpose(p).validate()?;
        }
        Ok(())
    }
}

/// Completion tokens per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentTokens {
    pub main: u64,
    pub draft: u64,
    pub forecast: u64,
    pub revision: u64,
    pub planning: u64,
    pub sleeptime: u64,
}

impl Default for AgentTokens {
    fn default() -> Self {
        Self {
            main: 120,
            draft: 100,
            forecast: 4,
            revision: 120,
            planning: 120,
            sleeptime: 300,
        }
    }
}

impl AgentTokens {
    pub fn for_purpose(&self, p: Purpose) -> u64 {
        match p {
            Purpose::Main => self.main,
            Purpose::Progressive | Purpose::Recovery => self.draft,
            Purpose::Forecast => self.forecast,
            Purpose::Revision => self.revision,
            Purpose::Planning => self.planning,
            Purpose::Sleeptime => self.sleeptime,
        }
    }
}

/// One completed or pending step as seen in a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
struct SeenStep {
    tool: String,
    key: Option<String>,
    observation: Option<String>,
}

/// What the agent can read off a prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PromptView {
    start_key: Option<String>,
    steps: Vec<SeenStep>,
    plans: Vec<String>,
    latest_observation: Option<String>,
}

fn parse_action_text(text: &str) -> (String, Option<String>) {
    let (tool, rest) = text.split_once(' ').unwrap_or((text, ""));
    let key = serde_json::from_str::<BTreeMap<String, String>>(rest.trim())
        .ok()
        .and_then(|m| m.get("key").cloned());
    (tool.to_string(), key)
}

impl PromptView {
    fn parse(text: &str) -> Self {
        let mut view = PromptView::default();
        if let Some(pos) = text.find("start=") {
            let key: String = text[pos + 6..]
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                .collect();
            view.start_key = Some(key);
        }
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.next() {
            if let Some(action) = line.strip_prefix("Action: ") {
                let (tool, key) = parse_action_text(action);
                view.steps.push(SeenStep {
                    tool,
                    key,
                    observation: None,
                });
            } else if let Some(obs) = line.strip_prefix("Observation: ") {
                if let Some(last) = view.steps.last_mut() {
                    if obs != "(pending)" {
                        last.observation = Some(obs.to_string());
                    }
                }
            } else if line.starts_with("Plan ") && line.contains(": ") {
                if let Some((_, plan)) = line.split_once(": ") {
                    view.plans.push(plan.to_string());
                }
            } else if line == "Latest observation:" {
                view.latest_observation = lines.peek().map(|s| s.to_string());
            }
        }
        view
    }

    fn completed(&self) -> impl Iterator<Item = &SeenStep> {
        self.steps.iter().filter(|s| s.observation.is_some())
    }

    fn pending(&self) -> Option<&SeenStep> {
        self.steps.last().filter(|s| s.observation.is_none())
    }

    /// The other option of the most recent fork that offered `key`.
    fn sibling_of(&self, key: &str) -> Option<String> {
        self.completed()
            .filter_map(|s| s.observation.as_deref()?.strip_prefix("FORK options="))
            .filter_map(|opts| opts.split_once(','))
            .filter(|(a, b)| *a == key || *b == key)
            .map(|(a, b)| if a == key { b.to_string() } else { a.to_string() })
            .last()
    }
}

fn switch_plan(key: &str) -> String {
    format!("switch to {LOOKUP_TOOL} {{\"key\":\"{key}\"}}")
}

fn act(thought: &str, call: ToolCall) -> String {
    format!("Thought: {thought}\nAction: {}", call.render())
}

fn lookup(key: &str) -> ToolCall {
    ToolCall::new(LOOKUP_TOOL, "").arg("key", key)
}

fn main_step(view: &PromptView) -> String {
    let last = view.completed().last();
    let Some(obs) = last.and_then(|s| s.observation.as_deref()) else {
        return match &view.start_key {
            Some(k) => act("Begin at the start key.", lookup(k)),
            None => act("No start key given.", ToolCall::new(FINAL_ANSWER_TOOL, "").arg("answer", "unknown")),
        };
    };
    if let Some(answer) = obs.strip_prefix("FOUND answer=") {
        return act(
            "The chain ended in the answer.",
            ToolCall::new(FINAL_ANSWER_TOOL, "").arg("answer", answer),
        );
    }
    if let Some(next) = obs.strip_prefix("FOUND next=") {
        return act("Follow the next key.", lookup(next));
    }
    if let Some(opts) = obs.strip_prefix("FORK options=") {
        let first = opts.split(',').next().unwrap_or(opts);
        return act("Two branches; try the first.", lookup(first));
    }
    if let Some(dead) = obs.strip_prefix("DEADEND key=") {
        let sibling = view.sibling_of(dead);
        if let Some(sib) = &sibling {
            if view.plans.iter().any(|p| p.contains(&switch_plan(sib))) {
                return act("A candidate plan names the other branch; take it.", lookup(sib));
            }
        }
        let hits = view
            .completed()
            .filter(|s| s.observation.as_deref() == Some(obs))
            .count();
        return match sibling {
            Some(sib) if hits >= 2 => act("The branch is dead; switch.", lookup(&sib)),
            _ => act("Maybe a transient miss; retry.", lookup(dead)),
        };
    }
    act(
        "Cannot make progress.",
        ToolCall::new(FINAL_ANSWER_TOOL, "").arg("answer", "unknown"),
    )
}

fn respond(purpose: Purpose, text: &str) -> String {
    let view = PromptView::parse(text);
    let pending_key = view.pending().and_then(|s| s.key.clone()).unwrap_or_default();
    match purpose {
        Purpose::Main => main_step(&view),
        Purpose::Progressive => {
            format!("when the lookup of {pending_key} returns, follow whatever key or answer it reports")
        }
        Purpose::Recovery => match view.sibling_of(&pending_key) {
            Some(sib) => switch_plan(&sib),
            None => format!("if the lookup of {pending_key} fails, repeat it once and re-check the key"),
        },
        Purpose::Forecast => {
            let obs = view.latest_observation.unwrap_or_default();
            if obs.starts_with("DEADEND") || obs.starts_with("FORK") {
                "Decision: RECOVERY".into()
            } else {
                "Decision: PROGRESSIVE".into()
            }
        }
        Purpose::Revision => {
            let obs = view.latest_observation.unwrap_or_default();
            format!("Reflection: the last lookup returned '{obs}'; keep following the chain.")
        }
        Purpose::Planning => "Plan: keep following keys until a lookup reports the answer.".into(),
        Purpose::Sleeptime => {
            "Insight: the chain may fork; remember the alternative branch in case one leads nowhere.".into()
        }
    }
}

/// Scripted agent with per-purpose latency streams, so the number of
/// drafts never shifts the latency of main generations.
#[derive(Debug)]
pub struct ScriptedAgentModel {
    latencies: AgentLatencies,
    tokens: AgentTokens,
    rngs: Mutex<BTreeMap<Purpose, ChaCha8Rng>>,
}

impl ScriptedAgentModel {
    /// `stream` yields the latency stream for a purpose.
    pub fn new(latencies: AgentLatencies, tokens: AgentTokens, stream: impl Fn(Purpose) -> ChaCha8Rng) -> Self {
        let rngs = Purpose::ALL.into_iter().map(|p| (p, stream(p))).collect();
        Self {
            latencies,
            tokens,
            rngs: Mutex::new(rngs),
        }
    }

    fn latency(&self, p: Purpose) -> Millis {
        let mut rngs = self.rngs.lock().unwrap();
        let rng = rngs.get_mut(&p).expect("every purpose has a stream");
        self.latencies.for_purpose(p).sample(rng)
    }
}

impl ModelClient for ScriptedAgentModel {
    fn generate(
        &self,
        req: &GenerationRequest,
        abort: Option<&Signal>,
        clock: &dyn Clock,
    ) -> Result<GenerationResult, ModelError> {
        req.validate()?;
        let purpose = Purpose::of(req);
        let text = req.text();
        let content = respond(purpose, &text);
        let latency = self.latency(purpose);
        Ok(simulate_generation(
            clock,
            abort,
            count_tokens(&text),
            content,
            latency,
            self.tokens.for_purpose(purpose),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn main_prompt(trajectory: &str, plans: &[&str]) -> String {
        let mut s = format!("Task: go from start=aaa onward.\n\nTrajectory:\n{trajectory}\n\nDecide the next step.");
        if !plans.is_empty() {
            s.push_str("\nThe following are candidate plans generated for the next step:\n\n");
            for (i, p) in plans.iter().enumerate() {
                s.push_str(&format!("Plan {}: {p}\n", i + 1));
            }
        }
        s
    }

    fn step(n: usize, key: &str, obs: &str) -> String {
        format!("Step {n}\nAction: lookup {{\"key\":\"{key}\"}}\nObservation: {obs}")
    }

    #[test]
    fn starts_at_start_key() {
        let out = respond(Purpose::Main, &main_prompt("", &[]));
        assert_eq!(out.lines().last().unwrap(), "Action: lookup {\"key\":\"aaa\"}");
    }

    #[test]
    fn follows_chain_and_answers() {
        let t = step(1, "aaa", "FOUND next=bbb");
        assert!(respond(Purpose::Main, &main_prompt(&t, &[])).ends_with("{\"key\":\"bbb\"}"));
        let t = format!("{t}\n\n{}", step(2, "bbb", "FOUND answer=42"));
        assert!(respond(Purpose::Main, &main_prompt(&t, &[])).ends_with("final_answer {\"answer\":\"42\"}"));
    }

    #[test]
    fn dead_end_retries_then_switches() {
        let t = format!("{}\n\n{}", step(1, "aaa", "FORK options=ddd,bbb"), step(2, "ddd", "DEADEND key=ddd"));
        assert!(respond(Purpose::Main, &main_prompt(&t, &[])).ends_with("{\"key\":\"ddd\"}"));
        let t2 = format!("{t}\n\n{}", step(3, "ddd", "DEADEND key=ddd"));
        assert!(respond(Purpose::Main, &main_prompt(&t2, &[])).ends_with("{\"key\":\"bbb\"}"));
    }

    #[test]
    fn recovery_plan_switches_a_step_earlier() {
        let t = format!("{}\n\n{}", step(1, "aaa", "FORK options=ddd,bbb"), step(2, "ddd", "DEADEND key=ddd"));
        let plan = switch_plan("bbb");
        let out = respond(Purpose::Main, &main_prompt(&t, &["keep going", &plan]));
        assert!(out.ends_with("{\"key\":\"bbb\"}"));
        // a plan naming some other key is ignored
        let wrong = switch_plan("zzz");
        assert!(respond(Purpose::Main, &main_prompt(&t, &[&wrong])).ends_with("{\"key\":\"ddd\"}"));
    }

    #[test]
    fn recovery_draft_names_sibling_of_pending_key() {
        let t = format!(
            "{}\n\nStep 2\nAction: lookup {{\"key\":\"ddd\"}}\nObservation: (pending)",
            step(1, "aaa", "FORK options=ddd,bbb")
        );
        assert_eq!(respond(Purpose::Recovery, &t), switch_plan("bbb"));
        assert!(!respond(Purpose::Progressive, &t).contains("Action:"));
    }

    #[test]
    fn forecast_reads_latest_observation() {
        assert_eq!(respond(Purpose::Forecast, "Latest observation:\nDEADEND key=x\n"), "Decision: RECOVERY");
        assert_eq!(respond(Purpose::Forecast, "Latest observation:\nFOUND next=y\n"), "Decision: PROGRESSIVE");
    }
}
