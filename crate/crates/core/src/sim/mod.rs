//! Seeded simulation: synthetic worlds, a scripted agent, and per-policy
//! runs on a virtual clock.
//!
//! Every random draw comes from a named stream derived from the run seed,
//! so changing one consumer (say, the number of drafts) never shifts what
//! another consumer sees.

mod agent;
mod world;

use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::clock::{Clock, VirtualClock, WallClock};
use crate::config::{Config, ConfigError, ModelKind};
use crate::metrics::TaskMetrics;
use crate::model::ModelClient;
use crate::orchestrator::{run_task, PolicyKind, RunError, TaskEnv, TaskRun};
use crate::trace::{MemorySink, Stamp, TraceEvent, TraceSink};

pub use crate::tools::calibrate_latency_profile;
pub use agent::{AgentLatencies, AgentTokens, Purpose, ScriptedAgentModel};
pub use world::{Fork, SyntheticTask, TaskFamily, LOOKUP_TOOL};

/// Independent generator for stream `name`, item `index`.
pub fn stream_rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task source {path}: {msg}")]
    Source { path: String, msg: String },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("model.kind is live; pass a live client")]
    NeedsLiveClient,
}

fn draw_in(rng: &mut ChaCha8Rng, [lo, hi]: [u32; 2]) -> u32 {
    rng.random_range(lo..=hi)
}

/// Tasks from `tasks.source` if set, otherwise `sim.n_tasks` drawn from the
/// scenario stream.
pub fn generate_tasks(cfg: &Config) -> Result<Vec<SyntheticTask>, SimError> {
    if let Some(path) = &cfg.tasks.source {
        return load_tasks(path);
    }
    let mut rng = stream_rng(cfg.sim.seed, "scenario", 0);
    let tasks = (0..cfg.sim.n_tasks)
        .map(|i| {
            let len = draw_in(&mut rng, cfg.tasks.chain_length);
            let forks = draw_in(&mut rng, cfg.tasks.forks);
            let task_seed: u64 = rng.random();
            let mut task_rng = ChaCha8Rng::seed_from_u64(task_seed);
            SyntheticTask::generate(format!("task-{i:04}"), cfg.tasks.family, len, forks, task_seed, &mut task_rng)
        })
        .collect();
    Ok(tasks)
}

/// Reads one task per non-blank line and checks each world.
pub fn load_tasks(path: &Path) -> Result<Vec<SyntheticTask>, SimError> {
    let err = |msg: String| SimError::Source {
        path: path.display().to_string(),
        msg,
    };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut tasks = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let task: SyntheticTask = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        let problems = task.validate();
        if !problems.is_empty() {
            return Err(err(format!("line {}: {}", i + 1, problems.join("; "))));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// Where generations come from.
#[derive(Clone, Copy)]
pub enum Backend<'a> {
    /// Scripted agent on a virtual clock.
    Simulated,
    /// A real client on the wall clock.
    Live(&'a dyn ModelClient),
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub metrics: Vec<TaskMetrics>,
    pub runs: Vec<TaskRun>,
}

/// Runs every task under `policy`. The other policy settings come from
/// `cfg.policy`. Per-task streams are shared across policies, so two
/// policies see the same tool and model latencies for the same task.
/// TASK_START events carry the config fingerprint.
pub fn run_policy(
    cfg: &Config,
    policy: PolicyKind,
    tasks: &[SyntheticTask],
    backend: Backend<'_>,
    full_text: bool,
    sink: &mut dyn TraceSink,
) -> Result<PolicyRun, SimError> {
    cfg.validate()?;
    if matches!(backend, Backend::Simulated) && cfg.model.kind == ModelKind::Live {
        return Err(SimError::NeedsLiveClient);
    }
    let mut run_cfg = cfg.run_config(full_text);
    run_cfg.policy.kind = policy;
    let tool_latency = cfg.tool_latency_model();
    let seed = cfg.sim.seed;
    let mut posterior = cfg.policy.prior;
    let mut sink = Stamp {
        inner: sink,
        fingerprint: cfg.fingerprint(),
    };
    let mut out = PolicyRun {
        policy,
        metrics: Vec::with_capacity(tasks.len()),
        runs: Vec::with_capacity(tasks.len()),
    };
    for (i, world) in tasks.iter().enumerate() {
        let i = i as u64;
        let world = Arc::new(world.clone());
        let tools = world.registry(tool_latency.clone(), stream_rng(seed, "latency/tool", i));
        let scripted;
        let model: &dyn ModelClient = match backend {
            Backend::Simulated => {
                scripted = ScriptedAgentModel::new(cfg.model.latency.clone(), cfg.model.tokens, |p| {
                    stream_rng(seed, &format!("latency/model/{}", p.as_str()), i)
                });
                &scripted
            }
            Backend::Live(client) => client,
        };
        let virtual_clock;
        let wall_clock;
        let clock: &dyn Clock = match backend {
            Backend::Simulated => {
                virtual_clock = VirtualClock::new();
                &virtual_clock
            }
            Backend::Live(_) => {
                wall_clock = WallClock::new();
                &wall_clock
            }
        };
        let mut bandit_rng = stream_rng(seed, "bandit", i);
        let env = TaskEnv {
            model,
            tools: &tools,
            clock,
            bandit_rng: &mut bandit_rng,
        };
        let run = run_task(&world.task(), &run_cfg, env, posterior, &mut sink)?;
        if cfg.policy.persist_posterior {
            posterior = run.posterior;
        }
        out.metrics.push(run.tally.metrics());
        out.runs.push(run);
    }
    Ok(out)
}

/// Simulates each policy on the configured tasks, keeping traces in memory.
pub fn run_scenario(cfg: &Config, policies: &[PolicyKind]) -> Result<Vec<(PolicyRun, Vec<TraceEvent>)>, SimError> {
    let tasks = generate_tasks(cfg)?;
    policies
        .iter()
        .map(|&p| {
            let mut sink = MemorySink::default();
            let run = run_policy(cfg, p, &tasks, Backend::Simulated, false, &mut sink)?;
            Ok((run, sink.events))
        })
        .collect()
}
