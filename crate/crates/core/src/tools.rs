//! Simulated tools with configurable latency.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Signal};
use crate::types::{Millis, Observation, ToolCall};

pub const FINAL_ANSWER_TOOL: &str = "final_answer";

/// Log-sd used by [`calibrate_latency_profile`]. With a 0.26 ultra-short
/// target it puts the median at ~4x the reasoning step.
pub const DEFAULT_LOG_SD: f64 = 2.155;

const CALIBRATION_DRAWS: usize = 10_000;
const CALIBRATION_SEED: u64 = 0x1d1e_5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyModel {
    Constant { ms: Millis },
    Lognormal { log_mean: f64, log_sd: f64 },
    /// Samples drawn with replacement.
    Empirical { samples: Vec<Millis> },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatencyError {
    #[error("ultra-short target {0} is not attainable (must lie strictly between 0 and 1)")]
    InfeasibleTarget(f64),
    #[error("reasoning step must be positive")]
    NonPositiveStep,
    #[error("invalid latency model: {0}")]
    Invalid(String),
}

impl LatencyModel {
    pub fn constant(ms: Millis) -> Self {
        LatencyModel::Constant { ms }
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        match self {
            LatencyModel::Constant { .. } => Ok(()),
            LatencyModel::Lognormal { log_mean, log_sd } => {
                if log_mean.is_finite() && log_sd.is_finite() && *log_sd >= 0.0 {
                    Ok(())
                } else {
                    Err(LatencyError::Invalid("lognormal parameters must be finite, sd >= 0".into()))
                }
            }
            LatencyModel::Empirical { samples } => {
                if samples.is_empty() || samples.contains(&0) {
                    Err(LatencyError::Invalid("empirical samples must be non-empty and positive".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Draws one latency. Sampled models never return zero; a constant zero
    /// is allowed and models an instantaneous tool.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Millis {
        match self {
            LatencyModel::Constant { ms } => *ms,
            LatencyModel::Lognormal { log_mean, log_sd } => {
                let d = LogNormal::new(*log_mean, *log_sd).expect("validated lognormal");
                (d.sample(rng).round() as Millis).max(1)
            }
            LatencyModel::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }

    pub fn median_ms(&self) -> f64 {
        match self {
            LatencyModel::Constant { ms } => *ms as f64,
            LatencyModel::Lognormal { log_mean, .. } => log_mean.exp(),
            LatencyModel::Empirical { samples } => {
                let mut s = samples.clone();
                s.sort_unstable();
                s[s.len() / 2] as f64
            }
        }
    }

    /// Web-search-like: heavy-tailed, ~26% of calls shorter than a step.
    pub fn search_like(reasoning_step_ms: Millis) -> Self {
        calibrate_latency_profile(0.26, reasoning_step_ms).expect("0.26 is feasible")
    }

    /// File-parser-like: near constant, well under one step.
    pub fn parser_like(reasoning_step_ms: Millis) -> Self {
        LatencyModel::Lognormal {
            log_mean: (0.3 * reasoning_step_ms as f64).ln(),
            log_sd: 0.1,
        }
    }

    /// Model-training-like: constant, 100 steps long.
    pub fn training_like(reasoning_step_ms: Millis) -> Self {
        LatencyModel::Constant {
            ms: 100 * reasoning_step_ms,
        }
    }
}

/// Fraction of `draws` latencies below one reasoning step.
pub fn measure_ultra_short<R: Rng + ?Sized>(
    model: &LatencyModel,
    reasoning_step_ms: Millis,
    draws: usize,
    rng: &mut R,
) -> f64 {
    let hits = (0..draws)
        .filter(|_| model.sample(rng) < reasoning_step_ms)
        .count();
    hits as f64 / draws as f64
}

/// Lognormal latency whose share of draws below `reasoning_step_ms` matches
/// `target`. The log-sd is fixed at [`DEFAULT_LOG_SD`]; the log-mean is found
/// by bisection on a fixed bank of standard-normal draws.
pub fn calibrate_latency_profile(target: f64, reasoning_step_ms: Millis) -> Result<LatencyModel, LatencyError> {
    calibrate_with_sd(target, reasoning_step_ms, DEFAULT_LOG_SD)
}

pub fn calibrate_with_sd(
    target: f64,
    reasoning_step_ms: Millis,
    log_sd: f64,
) -> Result<LatencyModel, LatencyError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(LatencyError::InfeasibleTarget(target));
    }
    if reasoning_step_ms == 0 {
        return Err(LatencyError::NonPositiveStep);
    }
    if !(log_sd > 0.0 && log_sd.is_finite()) {
        return Err(LatencyError::Invalid("log_sd must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let mut z: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    z.sort_unstable_by(f64::total_cmp);
    let threshold = (reasoning_step_ms as f64).ln();
    let frac_below = |mu: f64| {
        // draws with mu + sd*z < threshold form a prefix of the sorted bank
        let cut = (threshold - mu) / log_sd;
        z.partition_point(|&v| v < cut) as f64 / z.len() as f64
    };
    // frac_below decreases in mu
    let (mut lo, mut hi) = (threshold - 12.0 * log_sd, threshold + 12.0 * log_sd);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac_below(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LatencyModel::Lognormal {
        log_mean: 0.5 * (lo + hi),
        log_sd,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutput {
    pub content: String,
    pub success: bool,
}

impl ToolOutput {
    pub fn ok(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            success: true,
        }
    }

    pub fn failed(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            success: false,
        }
    }
}

pub type ToolBehavior = Arc<dyn Fn(&ToolCall) -> ToolOutput + Send + Sync>;

#[derive(Clone)]
pub struct ToolSpec {
    pub name: String,
    pub behavior: ToolBehavior,
    pub latency_model: LatencyModel,
}

impl fmt::Debug for ToolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolSpec")
            .field("name", &self.name)
            .field("latency_model", &self.latency_model)
            .finish_non_exhaustive()
    }
}

impl ToolSpec {
    pub fn new(
        name: impl Into<String>,
        latency_model: LatencyModel,
        behavior: impl Fn(&ToolCall) -> ToolOutput + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            behavior: Arc::new(behavior),
            latency_model,
        }
    }

    /// Echoes the `answer` argument.
    pub fn final_answer(latency_model: LatencyModel) -> Self {
        Self::new(FINAL_ANSWER_TOOL, latency_model, |call| {
            ToolOutput::ok(call.arguments.get("answer").cloned().unwrap_or_default())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("tool '{0}' is already registered")]
    Duplicate(String),
}

/// A tool call in flight.
#[derive(Debug)]
pub struct PendingTool {
    pub started_at: Millis,
    pub latency_ms: Millis,
    pub completion: Signal,
    observation: Observation,
}

impl PendingTool {
    pub fn completes_at(&self) -> Millis {
        self.started_at + self.latency_ms
    }

    /// Blocks until the tool completes and returns its observation.
    pub fn wait(self, clock: &dyn Clock) -> Observation {
        clock.wait(Some(&self.completion), None);
        self.observation
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }
}

/// Name-keyed tool table. Latencies come from one seeded stream, so the
/// sequence of draws is a pure function of the seed and the call order.
#[derive(Debug)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
    rng: Mutex<ChaCha8Rng>,
}

impl ToolRegistry {
    pub fn new(latency_rng: ChaCha8Rng) -> Self {
        Self {
            tools: BTreeMap::new(),
            rng: Mutex::new(latency_rng),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self::new(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        if self.tools.contains_key(&spec.name) {
            return Err(RegistryError::Duplicate(spec.name));
        }
        self.tools.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn list_tools(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Starts `call` now. Unknown tools complete immediately with a failed
    /// observation.
    pub fn start(&self, call: &ToolCall, clock: &dyn Clock) -> PendingTool {
        let now = clock.now_ms();
        let (output, latency) = match self.tools.get(&call.tool_name) {
            Some(spec) => {
                let latency = spec.latency_model.sample(&mut *self.rng.lock().unwrap());
                ((spec.behavior)(call), latency)
            }
            None => (
                ToolOutput::failed(format!("error: unknown tool '{}'", call.tool_name)),
                0,
            ),
        };
        let completes = now + latency;
        PendingTool {
            started_at: now,
            latency_ms: latency,
            completion: clock.schedule(completes),
            observation: Observation {
                call_id: call.call_id.clone(),
                content: output.content,
                arrived_at: completes,
                success_flag: output.success,
            },
        }
    }

    /// Runs `call` to completion: returns the observation and the idle time.
    pub fn execute(&self, call: &ToolCall, clock: &dyn Clock) -> (Observation, Millis) {
        let pending = self.start(call, clock);
        let idle = pending.latency_ms;
        (pending.wait(clock), idle)
    }
}
