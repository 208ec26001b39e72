//! Uniform generation interface.
//!
//! Three implementations ship with the crate: [`EchoClient`] (pure function
//! of the request), [`ScriptedClient`] (rule table with virtual-time latency)
//! and, behind the `live` feature, [`crate::live::HttpClient`]. The simulator
//! adds its own task-aware client in [`crate::sim::agent`].

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Signal};
use crate::types::Millis;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CallKind {
    Main,
    Draft,
    Forecast,
    Aggregate,
}

impl CallKind {
    /// Drafts run inside idle windows; everything else sits on the critical
    /// path.
    pub fn is_idle_time(self) -> bool {
        matches!(self, CallKind::Draft)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub call_kind: CallKind,
}

impl GenerationRequest {
    pub fn new(kind: CallKind, prompt: impl Into<String>) -> Self {
        Self::with_decoding(kind, prompt, Decoding::default())
    }

    pub fn with_decoding(kind: CallKind, prompt: impl Into<String>, d: Decoding) -> Self {
        Self {
            messages: vec![Message::user(prompt)],
            temperature: d.temperature,
            top_p: d.top_p,
            max_output_tokens: d.max_output_tokens,
            call_kind: kind,
        }
    }

    /// Concatenated message bodies, newline separated.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.messages.is_empty() {
            return Err(ModelError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ModelError::InvalidRequest("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidRequest("top_p must be in (0, 1]".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(ModelError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub duration_ms: Millis,
    pub aborted: bool,
    /// Token counts are local estimates rather than upstream usage.
    #[serde(default)]
    pub tokens_estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {0} ms")]
    Timeout(Millis),
    #[error("upstream returned status {0}")]
    Status(u16),
    #[error("malformed upstream response: {0}")]
    Malformed(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
}

pub trait ModelClient: Send + Sync {
    /// Runs one generation. If `abort` fires first the call returns early
    /// with `aborted = true` and partial accounting.
    fn generate(
        &self,
        req: &GenerationRequest,
        abort: Option<&Signal>,
        clock: &dyn Clock,
    ) -> Result<GenerationResult, ModelError>;
}

/// Whitespace-separated units. An approximation, used when upstream usage
/// is unavailable.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Keeps the first `fraction` of the words of `text`.
pub(crate) fn truncate_words(text: &str, kept: u64, total: u64) -> String {
    if total == 0 {
        return String::new();
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let keep = (words.len() as u64 * kept / total) as usize;
    words[..keep].join(" ")
}

/// Shared timing logic for simulated generations: occupy the model from now
/// for `latency_ms`, or until `abort` fires.
pub(crate) fn simulate_generation(
    clock: &dyn Clock,
    abort: Option<&Signal>,
    prompt_tokens: u64,
    content: String,
    latency_ms: Millis,
    completion_tokens: u64,
) -> GenerationResult {
    let start = clock.now_ms();
    match clock.wait(abort, Some(start + latency_ms)) {
        Some(fired) => {
            let elapsed = fired.saturating_sub(start);
            let partial = completion_tokens * elapsed / latency_ms.max(1);
            GenerationResult {
                content: truncate_words(&content, elapsed, latency_ms),
                prompt_tokens,
                completion_tokens: partial,
                duration_ms: elapsed,
                aborted: true,
                tokens_estimated: true,
            }
        }
        None => GenerationResult {
            content,
            prompt_tokens,
            completion_tokens,
            duration_ms: latency_ms,
            aborted: false,
            tokens_estimated: false,
        },
    }
}

/// Returns the last message verbatim, instantly.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoClient;

impl ModelClient for EchoClient {
    fn generate(
        &self,
        req: &GenerationRequest,
        _abort: Option<&Signal>,
        _clock: &dyn Clock,
    ) -> Result<GenerationResult, ModelError> {
        req.validate()?;
        let content = req.messages.last().map(|m| m.content.clone()).unwrap_or_default();
        Ok(GenerationResult {
            prompt_tokens: count_tokens(&req.text()),
            completion_tokens: count_tokens(&content),
            content,
            duration_ms: 0,
            aborted: false,
            tokens_estimated: true,
        })
    }
}

/// Condition over a request. Empty fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    #[serde(default)]
    pub kinds: Vec<CallKind>,
    #[serde(default)]
    pub contains: Option<String>,
}

impl RuleMatch {
    pub fn kind(kind: CallKind) -> Self {
        Self {
            kinds: vec![kind],
            contains: None,
        }
    }

    pub fn matches(&self, req: &GenerationRequest) -> bool {
        (self.kinds.is_empty() || self.kinds.contains(&req.call_kind))
            && self
                .contains
                .as_deref()
                .is_none_or(|needle| req.messages.iter().any(|m| m.content.contains(needle)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(default)]
    pub when: RuleMatch,
    pub response: String,
    pub latency_ms: Millis,
    /// Completion tokens; defaults to the whitespace count of `response`.
    #[serde(default)]
    pub tokens: Option<u64>,
    /// Fail instead of answering (after the latency elapses).
    #[serde(default)]
    pub fail: bool,
    /// Rule stops matching after this many uses.
    #[serde(default)]
    pub max_uses: Option<u32>,
}

impl ScriptedRule {
    pub fn new(when: RuleMatch, response: impl Into<String>, latency_ms: Millis) -> Self {
        Self {
            when,
            response: response.into(),
            latency_ms,
            tokens: None,
            fail: false,
            max_uses: None,
        }
    }

    pub fn tokens(mut self, n: u64) -> Self {
        self.tokens = Some(n);
        self
    }

    pub fn failing(mut self) -> Self {
        self.fail = true;
        self
    }

    pub fn max_uses(mut self, n: u32) -> Self {
        self.max_uses = Some(n);
        self
    }
}

/// Ordered rule table; the first matching rule with uses left wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub rules: Vec<ScriptedRule>,
    pub default_rule: ScriptedRule,
}

impl ScriptedPolicy {
    pub fn new(default_rule: ScriptedRule) -> Self {
        Self {
            rules: Vec::new(),
            default_rule,
        }
    }

    pub fn rule(mut self, rule: ScriptedRule) -> Self {
        self.rules.push(rule);
        self
    }
}

#[derive(Debug)]
pub struct ScriptedClient {
    policy: ScriptedPolicy,
    uses: Mutex<Vec<u32>>,
}

impl ScriptedClient {
    pub fn new(policy: ScriptedPolicy) -> Self {
        let n = policy.rules.len();
        Self {
            policy,
            uses: Mutex::new(vec![0; n]),
        }
    }

    fn pick(&self, req: &GenerationRequest) -> ScriptedRule {
        let mut uses = self.uses.lock().unwrap();
        for (i, rule) in self.policy.rules.iter().enumerate() {
            let exhausted = rule.max_uses.is_some_and(|m| uses[i] >= m);
            if !exhausted && rule.when.matches(req) {
                uses[i] += 1;
                return rule.clone();
            }
        }
        self.policy.default_rule.clone()
    }
}

impl ModelClient for ScriptedClient {
    fn generate(
        &self,
        req: &GenerationRequest,
        abort: Option<&Signal>,
        clock: &dyn Clock,
    ) -> Result<GenerationResult, ModelError> {
        req.validate()?;
        let rule = self.pick(req);
        let tokens = rule.tokens.unwrap_or_else(|| count_tokens(&rule.response));
        let result = simulate_generation(
            clock,
            abort,
            count_tokens(&req.text()),
            rule.response.clone(),
            rule.latency_ms,
            tokens,
        );
        if rule.fail && !result.aborted {
            return Err(ModelError::Scripted(rule.response));
        }
        Ok(result)
    }
}
