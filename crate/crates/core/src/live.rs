//! Chat-completions HTTP client.
//!
//! Speaks the common `/v1/chat/completions` JSON shape. Each request runs on
//! its own thread; an abort abandons the request and returns immediately.

use std::fmt;
use std::sync::mpsc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::clock::{Clock, Signal};
use crate::model::{count_tokens, GenerationRequest, GenerationResult, ModelClient, ModelError};
use crate::types::Millis;

pub const ENDPOINT_VAR: &str = "MODEL_ENDPOINT";
pub const API_KEY_VAR: &str = "MODEL_API_KEY";

const POLL: Duration = Duration::from_millis(5);

#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    timeout_ms: Millis,
}

impl fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpClient")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpClient {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout_ms: Millis,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            timeout_ms,
        }
    }

    /// Reads the endpoint and key from `MODEL_ENDPOINT` / `MODEL_API_KEY`.
    pub fn from_env(model: impl Into<String>, timeout_ms: Millis) -> Result<Self, ModelError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| ModelError::InvalidRequest(format!("{ENDPOINT_VAR} is not set")))?;
        let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Ok(Self::new(endpoint, key, model, timeout_ms))
    }

    fn body(&self, req: &GenerationRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_output_tokens,
        })
    }

    fn send(&self, body: serde_json::Value) -> Result<String, ModelError> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let response = request.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ModelError::Timeout(self.timeout_ms),
            other => ModelError::Transport(other.to_string()),
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ModelError::Status(status));
        }
        response
            .into_body()
            .read_to_string()
            .map_err(|e| ModelError::Transport(e.to_string()))
    }
}

/// Extracts content and token usage from a chat-completions response body.
/// Upstream usage is preferred; whitespace counts fill in when absent.
pub fn parse_chat_response(
    raw: &str,
    prompt_text: &str,
) -> Result<(String, u64, u64, bool), ModelError> {
    let parsed: ChatResponse =
        serde_json::from_str(raw).map_err(|e| ModelError::Malformed(e.to_string()))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ModelError::Malformed("empty choices".into()))?
        .message
        .content
        .unwrap_or_default();
    Ok(match parsed.usage {
        Some(u) => (content, u.prompt_tokens, u.completion_tokens, false),
        None => {
            let c = count_tokens(&content);
            (content, count_tokens(prompt_text), c, true)
        }
    })
}

impl ModelClient for HttpClient {
    fn generate(
        &self,
        req: &GenerationRequest,
        abort: Option<&Signal>,
        clock: &dyn Clock,
    ) -> Result<GenerationResult, ModelError> {
        req.validate()?;
        let start = clock.now_ms();
        let body = self.body(req);
        let client = self.clone();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let _ = tx.send(client.send(body));
        });
        loop {
            match rx.recv_timeout(POLL) {
                Ok(outcome) => {
                    let raw = outcome?;
                    let (content, prompt_tokens, completion_tokens, estimated) =
                        parse_chat_response(&raw, &req.text())?;
                    return Ok(GenerationResult {
                        content,
                        prompt_tokens,
                        completion_tokens,
                        duration_ms: clock.now_ms().saturating_sub(start),
                        aborted: false,
                        tokens_estimated: estimated,
                    });
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    if let Some(fired) = abort.and_then(Signal::fired_at) {
                        return Ok(GenerationResult {
                            content: String::new(),
                            prompt_tokens: count_tokens(&req.text()),
                            completion_tokens: 0,
                            duration_ms: fired.saturating_sub(start),
                            aborted: true,
                            tokens_estimated: true,
                        });
                    }
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(ModelError::Transport("request thread vanished".into()));
                }
            }
        }
    }
}
