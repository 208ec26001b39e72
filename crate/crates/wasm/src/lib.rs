//! Browser bindings for the idle-time drafting demo page.
//!
//! Three operations, each returning JSON for `www/main.js` to draw:
//! posterior sampling, one idle window's draft timeline, and a policy
//! comparison on the simulator. Everything runs on the virtual clock.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use idledraft_core::bandit::{select_strategy, StrategyPosterior};
use idledraft_core::clock::{Clock, VirtualClock};
use idledraft_core::config::{Config, ToolProfile};
use idledraft_core::metrics::clip_intervals;
use idledraft_core::model::{CallKind, RuleMatch, ScriptedClient, ScriptedPolicy, ScriptedRule};
use idledraft_core::orchestrator::PolicyKind;
use idledraft_core::prompts::PromptContext;
use idledraft_core::sim::{run_scenario, TaskFamily};
use idledraft_core::speculation::{run_idle_drafting, DraftOutcome, DraftingConfig, DraftingSession};
use idledraft_core::tools::LatencyModel;
use idledraft_core::types::{DraftStrategy, Task, ToolCall, TrajectoryState};

#[derive(Debug, Serialize)]
pub struct PosteriorHistogram {
    pub alpha: u32,
    pub beta: u32,
    pub counts: Vec<u32>,
    /// Share of draws above one half, i.e. progressive picks.
    pub progressive_share: f64,
    pub mean: f64,
}

pub fn posterior_histogram(alpha: u32, beta: u32, draws: u32, bins: u32, seed: u64) -> Result<PosteriorHistogram, String> {
    let post = StrategyPosterior::from_counts(alpha, beta).ok_or("alpha and beta must be at least 1")?;
    if bins == 0 || draws == 0 {
        return Err("draws and bins must be positive".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; bins as usize];
    let (mut prog, mut sum) = (0u32, 0.0);
    for _ in 0..draws {
        let s = post.sample(&mut rng);
        let b = ((s.p_hat * f64::from(bins)) as usize).min(bins as usize - 1);
        counts[b] += 1;
        sum += s.p_hat;
        prog += u32::from(select_strategy(&s) == DraftStrategy::Prog);
    }
    Ok(PosteriorHistogram {
        alpha,
        beta,
        counts,
        progressive_share: f64::from(prog) / f64::from(draws),
        mean: sum / f64::from(draws),
    })
}

#[derive(Debug, Serialize)]
pub struct TimelineDraft {
    pub iteration: u32,
    pub strategy: DraftStrategy,
    pub p_hat: f64,
    pub start_ms: u64,
    pub end_ms: u64,
    pub outcome: DraftOutcome,
}

#[derive(Debug, Serialize)]
pub struct DraftTimeline {
    pub tool_ms: u64,
    pub drafts: Vec<TimelineDraft>,
    pub complete: usize,
    pub busy_ms: u64,
    pub itu: f64,
}

/// Drafts generated while one tool call of `tool_ms` runs.
pub fn draft_timeline(
    tool_ms: u64,
    draft_ms: u64,
    cap: u32,
    alpha: u32,
    beta: u32,
    seed: u64,
) -> Result<DraftTimeline, String> {
    let post = StrategyPosterior::from_counts(alpha, beta).ok_or("alpha and beta must be at least 1")?;
    if cap == 0 || draft_ms == 0 {
        return Err("cap and draft latency must be positive".into());
    }
    let model = ScriptedClient::new(ScriptedPolicy::new(ScriptedRule::new(
        RuleMatch::kind(CallKind::Draft),
        "candidate next step",
        draft_ms,
    )));
    let clock = VirtualClock::new();
    let arrival = clock.schedule(tool_ms);
    let task = Task::new("demo", "demo task");
    let state = TrajectoryState::new("demo");
    let call = ToolCall::new("search", "demo-0");
    let ctx = PromptContext::new(&task, &state).pending(&call);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let session = run_idle_drafting(
        DraftingSession::new(0, post, cap as usize),
        &model,
        &ctx,
        &arrival,
        &mut rng,
        &clock,
        &DraftingConfig::default(),
    );
    let busy_ms: u64 = clip_intervals(&session.busy_intervals, 0, tool_ms)
        .iter()
        .map(|(s, e)| e - s)
        .sum();
    Ok(DraftTimeline {
        tool_ms,
        complete: session.complete_count(),
        drafts: session
            .records
            .iter()
            .map(|r| TimelineDraft {
                iteration: r.iteration,
                strategy: r.strategy,
                p_hat: r.p_hat,
                start_ms: r.start_ms,
                end_ms: r.end_ms,
                outcome: r.outcome,
            })
            .collect(),
        busy_ms,
        itu: if tool_ms == 0 { 0.0 } else { busy_ms as f64 / tool_ms as f64 },
    })
}

#[derive(Debug, Serialize)]
pub struct PolicyRow {
    pub policy: PolicyKind,
    pub success_rate: f64,
    pub wall_ms: f64,
    pub itu: f64,
    pub tokens_idle: f64,
    pub tokens_test: f64,
    pub steps: f64,
}

/// `tools` is `search`, `parser`, `training`, or a constant latency in ms.
pub fn compare_policies(tools: &str, family: &str, n_tasks: u32, seed: u64) -> Result<Vec<PolicyRow>, String> {
    let mut cfg = Config::default();
    cfg.sim.seed = seed;
    cfg.sim.n_tasks = n_tasks.clamp(1, 200) as usize;
    cfg.tasks.family = match family {
        "keychase" => TaskFamily::Keychase,
        "deadend" => TaskFamily::Deadend,
        other => return Err(format!("unknown task family '{other}'")),
    };
    match tools {
        "search" => cfg.tasks.profile = Some(ToolProfile::Search),
        "parser" => cfg.tasks.profile = Some(ToolProfile::Parser),
        "training" => cfg.tasks.profile = Some(ToolProfile::Training),
        ms => {
            let ms: u64 = ms.parse().map_err(|_| format!("unknown tool profile '{ms}'"))?;
            cfg.tasks.tool_latency = LatencyModel::constant(ms);
        }
    }
    let runs = run_scenario(&cfg, &PolicyKind::ALL).map_err(|e| e.to_string())?;
    Ok(runs
        .into_iter()
        .map(|(run, _)| {
            let n = run.metrics.len() as f64;
            let mean = |f: &dyn Fn(&idledraft_core::metrics::TaskMetrics) -> f64| run.metrics.iter().map(f).sum::<f64>() / n;
            PolicyRow {
                policy: run.policy,
                success_rate: mean(&|m| f64::from(u8::from(m.success))),
                wall_ms: mean(&|m| m.wall_ms as f64),
                itu: mean(&|m| m.itu),
                tokens_idle: mean(&|m| m.tokens_idle as f64),
                tokens_test: mean(&|m| m.tokens_test as f64),
                steps: mean(&|m| f64::from(m.steps)),
            }
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = samplePosterior)]
pub fn sample_posterior_js(alpha: u32, beta: u32, draws: u32, bins: u32, seed: u32) -> Result<String, JsValue> {
    to_js(posterior_histogram(alpha, beta, draws, bins, u64::from(seed)))
}

#[wasm_bindgen(js_name = draftTimeline)]
pub fn draft_timeline_js(tool_ms: u32, draft_ms: u32, cap: u32, alpha: u32, beta: u32, seed: u32) -> Result<String, JsValue> {
    to_js(draft_timeline(
        u64::from(tool_ms),
        u64::from(draft_ms),
        cap,
        alpha,
        beta,
        u64::from(seed),
    ))
}

#[wasm_bindgen(js_name = comparePolicies)]
pub fn compare_policies_js(tools: &str, family: &str, n_tasks: u32, seed: u32) -> Result<String, JsValue> {
    to_js(compare_policies(tools, family, n_tasks, u64::from(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_draw() {
        let h = posterior_histogram(3, 1, 2000, 10, 1).unwrap();
        assert_eq!(h.counts.iter().sum::<u32>(), 2000);
        // Beta(3,1): P(p > 0.5) = 7/8
        assert!((h.progressive_share - 0.875).abs() < 0.03);
        assert!(posterior_histogram(0, 1, 10, 10, 1).is_err());
    }

    #[test]
    fn timeline_three_complete_one_cut() {
        let t = draft_timeline(10_000, 3000, 5, 1, 1, 2).unwrap();
        assert_eq!(t.complete, 3);
        assert_eq!(t.drafts.len(), 4);
        assert_eq!(t.drafts[3].outcome, DraftOutcome::Cancelled);
        assert_eq!(t.busy_ms, 10_000);
    }

    #[test]
    fn comparison_has_every_policy() {
        let rows = compare_policies("10000", "keychase", 3, 1).unwrap();
        assert_eq!(rows.len(), PolicyKind::ALL.len());
        let vanilla = rows.iter().find(|r| r.policy == PolicyKind::Vanilla).unwrap();
        assert_eq!(vanilla.itu, 0.0);
        assert!(compare_policies("bogus", "keychase", 3, 1).is_err());
    }
}
