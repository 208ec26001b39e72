//! Run configuration: one JSON document with `model`, `policy`, `sim` and
//! `tasks` sections. Every field has a default; unknown fields are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::Decoding;
use crate::orchestrator::{PolicyConfig, RunConfig};
use crate::sim::{AgentLatencies, AgentTokens, TaskFamily};
use crate::tools::LatencyModel;
use crate::types::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// The simulator's scripted agent on a virtual clock.
    Scripted,
    /// A chat-completions endpoint on the wall clock.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub name: String,
    pub decoding: Decoding,
    pub timeout_ms: Millis,
    pub latency: AgentLatencies,
    pub tokens: AgentTokens,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Scripted,
            name: "scripted-agent".into(),
            decoding: Decoding::default(),
            timeout_ms: 120_000,
            latency: AgentLatencies::default(),
            tokens: AgentTokens::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub seed: u64,
    pub n_tasks: usize,
    /// Reference reasoning step for latency profiles.
    pub reasoning_step_ms: Millis,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            seed: 7,
            n_tasks: 100,
            reasoning_step_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolProfile {
    Search,
    Parser,
    Training,
}

impl ToolProfile {
    pub fn latency_model(self, reasoning_step_ms: Millis) -> LatencyModel {
        match self {
            ToolProfile::Search => LatencyModel::search_like(reasoning_step_ms),
            ToolProfile::Parser => LatencyModel::parser_like(reasoning_step_ms),
            ToolProfile::Training => LatencyModel::training_like(reasoning_step_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub family: TaskFamily,
    /// Inclusive range of lookups on the success path.
    pub chain_length: [u32; 2],
    /// Inclusive range of forks per task (DEADEND only).
    pub forks: [u32; 2],
    pub tool_latency: LatencyModel,
    /// Overrides `tool_latency` with a preset scaled to the reasoning step.
    pub profile: Option<ToolProfile>,
    /// JSONL file of pre-generated synthetic tasks, used instead of
    /// generating `sim.n_tasks` of them.
    pub source: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            family: TaskFamily::Keychase,
            chain_length: [3, 5],
            forks: [1, 2],
            tool_latency: LatencyModel::constant(10_000),
            profile: None,
            source: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub policy: PolicyConfig,
    pub sim: SimSection,
    pub tasks: TaskSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy.validate().map_err(ConfigError::Invalid)?;
        let [lo, hi] = self.tasks.chain_length;
        if lo == 0 || lo > hi {
            return Err(ConfigError::Invalid("tasks.chain_length must be [min, max] with 1 <= min <= max".into()));
        }
        let [flo, fhi] = self.tasks.forks;
        if flo > fhi {
            return Err(ConfigError::Invalid("tasks.forks must be [min, max] with min <= max".into()));
        }
        if self.tasks.family == TaskFamily::Deadend && (lo < 2 || fhi == 0) {
            return Err(ConfigError::Invalid(
                "deadend tasks need chain_length >= 2 and at least one fork".into(),
            ));
        }
        if self.sim.reasoning_step_ms == 0 {
            return Err(ConfigError::Invalid("sim.reasoning_step_ms must be positive".into()));
        }
        self.tasks
            .tool_latency
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("tasks.tool_latency: {e}")))?;
        self.model
            .latency
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("model.latency: {e}")))?;
        Ok(())
    }

    pub fn tool_latency_model(&self) -> LatencyModel {
        match self.tasks.profile {
            Some(p) => p.latency_model(self.sim.reasoning_step_ms),
            None => self.tasks.tool_latency.clone(),
        }
    }

    pub fn run_config(&self, log_full_text: bool) -> RunConfig {
        RunConfig {
            policy: self.policy,
            decoding: self.model.decoding,
            log_full_text,
        }
    }

    /// Hex SHA-256 of the resolved config, seed included.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
