//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use idledraft_core::bandit::{sample_preference, update_posterior, ForecastSignal, StrategyPosterior};
use idledraft_core::clock::{Clock, VirtualClock};
use idledraft_core::config::{Config, ToolProfile};
use idledraft_core::metrics::{metrics_from_events, TaskMetrics};
use idledraft_core::model::{CallKind, RuleMatch, ScriptedClient, ScriptedPolicy, ScriptedRule};
use idledraft_core::orchestrator::PolicyKind;
use idledraft_core::prompts::PromptContext;
use idledraft_core::sim::{generate_tasks, run_policy, stream_rng, Backend, PolicyRun, TaskFamily};
use idledraft_core::speculation::{
    build_aggregation_prompt, build_draft_prompt, build_forecast_prompt, build_revision_prompt, build_sleeptime_prompt,
    run_idle_drafting, DraftOutcome, DraftingConfig, DraftingSession,
};
use idledraft_core::tools::{measure_ultra_short, LatencyModel};
use idledraft_core::trace::{
    action_sequences, group_by_task, validate_clear, validate_freeze, validate_posterior_increments, EventKind,
    MemorySink, TraceEvent,
};
use idledraft_core::types::{
    Draft, DraftBuffer, DraftStatus, DraftStrategy, Millis, Observation, Task, ToolCall, TrajectoryState,
};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

/// A policy's run plus its trace, kept for the trace-fidelity criterion.
type Traced = (PolicyRun, Vec<TraceEvent>);

type Snapshot = (Option<u32>, Option<u32>);

fn run_traced(cfg: &Config, policy: PolicyKind) -> Traced {
    let tasks = generate_tasks(cfg).expect("tasks");
    let mut sink = MemorySink::default();
    let run = run_policy(cfg, policy, &tasks, Backend::Simulated, false, &mut sink).expect("run");
    (run, sink.events)
}

fn mean(rows: &[TaskMetrics], f: impl Fn(&TaskMetrics) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

fn criterion_1() -> Verdict {
    let mut checked = 0;
    for alpha in 1..20u32 {
        for beta in 1..=(20 - alpha) {
            let post = StrategyPosterior { alpha, beta };
            let prog = update_posterior(post, ForecastSignal::Prog);
            let rec = update_posterior(post, ForecastSignal::Rec);
            if (prog.alpha, prog.beta) != (alpha + 1, beta) || (rec.alpha, rec.beta) != (alpha, beta + 1) {
                return verdict(false, format!("wrong update at ({alpha}, {beta})"));
            }
            checked += 2;
        }
    }
    verdict(true, format!("{checked} updates exact"))
}

fn criterion_2() -> Verdict {
    const DRAWS: usize = 100_000;
    let mut worst: f64 = 0.0;
    let mut worst_cross: f64 = 0.0;
    for alpha in 1..=5u32 {
        for beta in 1..=5u32 {
            let analytic = 1.0 - statrs::function::beta::beta_reg(f64::from(alpha), f64::from(beta), 0.5);
            let post = StrategyPosterior { alpha, beta };
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(alpha * 16 + beta));
            let above = (0..DRAWS).filter(|_| sample_preference(&post, &mut rng).p_hat > 0.5).count();
            let empirical = above as f64 / DRAWS as f64;

            // second sampler: X / (X + Y) with X ~ Gamma(alpha), Y ~ Gamma(beta)
            let gx = Gamma::new(f64::from(alpha), 1.0).unwrap();
            let gy = Gamma::new(f64::from(beta), 1.0).unwrap();
            let mut rng2 = ChaCha8Rng::seed_from_u64(u64::from(alpha * 16 + beta) + 1000);
            let above2 = (0..DRAWS)
                .filter(|_| {
                    let x = gx.sample(&mut rng2);
                    let y = gy.sample(&mut rng2);
                    x / (x + y) > 0.5
                })
                .count();
            let cross = above2 as f64 / DRAWS as f64;

            worst = worst.max((empirical - analytic).abs());
            worst_cross = worst_cross.max((cross - analytic).abs());
        }
    }
    verdict(
        worst <= 0.01 && worst_cross <= 0.01,
        format!("max |empirical - analytic| = {worst:.4}, gamma-ratio cross-check {worst_cross:.4}"),
    )
}

fn criterion_3() -> Verdict {
    let draft_latencies: [Millis; 5] = [700, 1000, 1500, 2500, 3000];
    let tool_latencies: [Millis; 10] = [0, 500, 1000, 2999, 3000, 4500, 7001, 10_000, 15_500, 40_000];
    let task = Task::new("grid", "q");
    let state = TrajectoryState::new("grid");
    let call = ToolCall::new("lookup", "grid-0");
    let ctx = PromptContext::new(&task, &state).pending(&call);
    let mut points = 0;
    for &d in &draft_latencies {
        for &t in &tool_latencies {
            let model = ScriptedClient::new(ScriptedPolicy::new(ScriptedRule::new(
                RuleMatch::kind(CallKind::Draft),
                "plan",
                d,
            )));
            let clock = VirtualClock::new();
            let arrival = clock.schedule(t);
            let mut rng = ChaCha8Rng::seed_from_u64(t ^ d);
            let session = run_idle_drafting(
                DraftingSession::new(0, StrategyPosterior::default(), 5),
                &model,
                &ctx,
                &arrival,
                &mut rng,
                &clock,
                &DraftingConfig::default(),
            );
            let complete = session.records.iter().filter(|r| r.outcome == DraftOutcome::Complete).count() as u64;
            let cancelled = session.records.iter().filter(|r| r.outcome == DraftOutcome::Cancelled).count() as u64;
            let expected_complete = (t / d).min(5);
            let cap_binding = t / d >= 5;
            let expected_cancelled = u64::from(t % d > 0 && !cap_binding);
            if complete != expected_complete || cancelled != expected_cancelled {
                return verdict(
                    false,
                    format!("t={t} d={d}: {complete} complete / {cancelled} cancelled, expected {expected_complete} / {expected_cancelled}"),
                );
            }
            points += 1;
        }
    }
    verdict(true, format!("{points} grid points exact"))
}

/// Reasoning 2000 ms, revision equal to reasoning, tool twice reasoning.
fn latency_regime() -> Config {
    let mut cfg = Config::default();
    cfg.sim.seed = 4;
    cfg.sim.n_tasks = 100;
    cfg.tasks.family = TaskFamily::Keychase;
    cfg.tasks.tool_latency = LatencyModel::constant(4000);
    cfg.model.latency.main = LatencyModel::constant(2000);
    cfg.model.latency.revision = LatencyModel::constant(2000);
    cfg.model.latency.forecast = LatencyModel::constant(100);
    cfg
}

fn criterion_4(traces: &mut Vec<Traced>) -> Verdict {
    let cfg = latency_regime();
    let vanilla = run_traced(&cfg, PolicyKind::Vanilla);
    let idlespec = run_traced(&cfg, PolicyKind::Idlespec);
    let seqrev = run_traced(&cfg, PolicyKind::Seqrev);
    let wall = |r: &Traced| mean(&r.0.metrics, |m| m.wall_ms as f64);
    let ri = wall(&idlespec) / wall(&vanilla);
    let rs = wall(&seqrev) / wall(&vanilla);
    let ok = (0.97..=1.03).contains(&ri) && rs >= 1.25;
    traces.extend([vanilla, idlespec, seqrev]);
    verdict(ok, format!("IDLESPEC/VANILLA = {ri:.4}, SEQREV/VANILLA = {rs:.4}"))
}

fn heterogeneous_regime() -> Config {
    let mut cfg = Config::default();
    cfg.sim.seed = 5;
    cfg.sim.n_tasks = 100;
    cfg.tasks.family = TaskFamily::Deadend;
    cfg.tasks.profile = Some(ToolProfile::Search);
    cfg
}

fn criterion_5(traces: &mut Vec<Traced>) -> (Verdict, Vec<Traced>) {
    let cfg = heterogeneous_regime();
    let tool = cfg.tool_latency_model();
    let mut rng = stream_rng(cfg.sim.seed, "calibration-check", 0);
    let calibrated = measure_ultra_short(&tool, cfg.sim.reasoning_step_ms, 10_000, &mut rng);

    let runs: Vec<Traced> = [PolicyKind::Vanilla, PolicyKind::Idlespec, PolicyKind::Sleeptime]
        .into_iter()
        .map(|p| run_traced(&cfg, p))
        .collect();
    let itu = |r: &Traced| mean(&r.0.metrics, |m| m.itu);
    let (v, i, s) = (itu(&runs[0]), itu(&runs[1]), itu(&runs[2]));
    // pooled over every tool call in the simulated runs
    let (short, total) = runs[0].0.runs.iter().flat_map(|r| &r.windows).fold((0, 0), |(s, n), w| {
        (s + u64::from(w.idle_duration_ms < cfg.sim.reasoning_step_ms), n + 1)
    });
    let pooled = short as f64 / total as f64;
    let ok = (calibrated - 0.26).abs() <= 0.03 && v == 0.0 && i >= 2.0 * s;
    traces.extend(runs.iter().cloned());
    (
        verdict(
            ok,
            format!(
                "ultra-short {calibrated:.3} (10k draws), {pooled:.3} (run); ITU IDLESPEC {i:.3}, SLEEPTIME {s:.3}, VANILLA {v}"
            ),
        ),
        runs,
    )
}

fn criterion_6() -> Verdict {
    for seed in 0..50u64 {
        let mut cfg = Config::default();
        cfg.sim.seed = seed;
        cfg.sim.n_tasks = 4;
        cfg.tasks.family = TaskFamily::Deadend;
        cfg.tasks.tool_latency = LatencyModel::constant(0);
        let (_, va) = run_traced(&cfg, PolicyKind::Vanilla);
        let (_, vi) = run_traced(&cfg, PolicyKind::Idlespec);
        let a: Vec<Vec<String>> = action_sequences(&va).into_values().collect();
        let b: Vec<Vec<String>> = action_sequences(&vi).into_values().collect();
        if a != b {
            return verdict(false, format!("seed {seed}: action sequences differ"));
        }
    }
    verdict(true, "50 seeds, identical action sequences")
}

fn criterion_7(traces: &mut Vec<Traced>) -> Verdict {
    let mut cfg = Config::default();
    cfg.sim.seed = 7;
    cfg.sim.n_tasks = 100;
    cfg.tasks.family = TaskFamily::Deadend;
    let vanilla = run_traced(&cfg, PolicyKind::Vanilla);
    let idlespec = run_traced(&cfg, PolicyKind::Idlespec);
    let steps = |r: &Traced| {
        let solved: Vec<TaskMetrics> = r.0.metrics.iter().filter(|m| m.success).cloned().collect();
        if solved.is_empty() {
            f64::INFINITY
        } else {
            mean(&solved, |m| f64::from(m.steps))
        }
    };
    let success = |r: &Traced| mean(&r.0.metrics, |m| f64::from(u8::from(m.success)));
    let (sv, si) = (steps(&vanilla), steps(&idlespec));
    let (pv, pi) = (success(&vanilla), success(&idlespec));
    traces.extend([vanilla, idlespec]);
    verdict(
        si < sv && pi >= pv,
        format!("steps IDLESPEC {si:.2} vs VANILLA {sv:.2}; success {pi:.2} vs {pv:.2}"),
    )
}

fn bits(m: &TaskMetrics) -> Vec<u64> {
    vec![
        m.itu.to_bits(),
        m.ultra_short_ratio.to_bits(),
        m.tokens_idle,
        m.tokens_test,
        m.wall_ms,
        m.reasoning_ms,
        m.idle_ms,
        u64::from(m.steps),
        u64::from(m.success),
    ]
}

fn criterion_8(traces: &[Traced]) -> Verdict {
    let mut tasks = 0;
    for (run, events) in traces {
        let mut bytes = Vec::new();
        idledraft_core::trace::write_trace(&mut bytes, events).unwrap();
        let replayed = match idledraft_core::trace::read_trace(bytes.as_slice()) {
            Ok(e) => metrics_from_events(&e),
            Err(e) => return verdict(false, format!("{:?} trace does not parse: {e}", run.policy)),
        };
        if replayed.len() != run.metrics.len() {
            return verdict(false, format!("{:?}: task count differs", run.policy));
        }
        for (a, b) in replayed.iter().zip(&run.metrics) {
            if bits(a) != bits(b) || a.task_id != b.task_id || a.bin != b.bin {
                return verdict(false, format!("{:?} {}: replay differs", run.policy, a.task_id));
            }
        }
        let problems = validate_posterior_increments(events);
        if !problems.is_empty() {
            return verdict(false, problems[0].clone());
        }
        tasks += replayed.len();
    }
    verdict(true, format!("{} traces, {tasks} tasks bit-identical", traces.len()))
}

fn criterion_9() -> Verdict {
    let anchors = [
        "NEXT ACTION STEP",
        "EXACTLY one distinct recovery plan",
        "output a single decision",
        "starting points",
        "reflecting on the latest action's Observation",
        "Make as many inferences as possible",
    ];
    let task = Task::new("p", "question");
    let state = TrajectoryState::new("p");
    let call = ToolCall::new("lookup", "p-0").arg("key", "k");
    let ctx = PromptContext::new(&task, &state).pending(&call);
    let obs = Observation {
        call_id: "p-0".into(),
        content: "FOUND next=x".into(),
        arrived_at: 0,
        success_flag: true,
    };
    let mut buf = DraftBuffer::new(5);
    buf.push(Draft {
        strategy: DraftStrategy::Prog,
        content: "plan".into(),
        iteration: 0,
        status: DraftStatus::Complete,
        token_count: 1,
        step_index: 0,
    })
    .unwrap();
    let rendered = [
        build_draft_prompt(DraftStrategy::Prog, &DraftBuffer::new(5), &ctx),
        build_draft_prompt(DraftStrategy::Rec, &DraftBuffer::new(5), &ctx),
        build_forecast_prompt(&ctx, &obs),
        build_aggregation_prompt(&buf, &PromptContext::new(&task, &state)),
        build_revision_prompt(&ctx, &obs),
        build_sleeptime_prompt(&ctx),
    ];
    let missing: Vec<&str> = anchors
        .iter()
        .zip(&rendered)
        .filter(|(a, text)| !text.contains(*a))
        .map(|(a, _)| *a)
        .collect();
    verdict(missing.is_empty(), if missing.is_empty() { "6/6 anchors".to_string() } else { format!("missing {missing:?}") })
}

fn criterion_10(runs: &[Traced]) -> Verdict {
    let mut windows = 0;
    let mut offered = 0;
    for (_, events) in runs {
        let mut problems = validate_freeze(events);
        problems.extend(validate_clear(events));
        for evs in group_by_task(events).values() {
            let mut per_step: std::collections::BTreeMap<u32, Vec<Snapshot>> = Default::default();
            for e in evs.iter().filter(|e| e.kind == EventKind::DraftStart) {
                per_step.entry(e.step).or_default().push((e.payload.alpha, e.payload.beta));
            }
            for (step, snaps) in per_step {
                windows += 1;
                if snaps.windows(2).any(|w| w[0] != w[1]) {
                    problems.push(format!("step {step}: more than one snapshot"));
                }
            }
            offered += evs
                .iter()
                .filter(|e| e.kind == EventKind::MainGen)
                .map(|e| e.payload.offered.as_ref().map_or(0, Vec::len))
                .sum::<usize>();
        }
        if let Some(p) = problems.first() {
            return verdict(false, p.clone());
        }
    }
    verdict(
        windows > 0 && offered > 0,
        format!("{windows} drafting windows, {offered} offered drafts checked"),
    )
}

fn main() -> ExitCode {
    let budgets: [Duration; 10] = [1, 30, 5, 60, 120, 10, 60, 60, 1, 60].map(Duration::from_secs);
    let mut traces: Vec<Traced> = Vec::new();
    let mut criterion5_runs: Vec<Traced> = Vec::new();
    let mut failed = 0;
    for n in 1..=10usize {
        let started = Instant::now();
        let v = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&mut traces),
            5 => {
                let (v, runs) = criterion_5(&mut traces);
                criterion5_runs = runs;
                v
            }
            6 => criterion_6(),
            7 => criterion_7(&mut traces),
            8 => criterion_8(&traces),
            9 => criterion_9(),
            _ => criterion_10(&criterion5_runs),
        };
        let elapsed = started.elapsed();
        let in_time = elapsed <= budgets[n - 1];
        let pass = v.ok && in_time;
        failed += usize::from(!pass);
        let timing = if in_time { String::new() } else { format!(" [over {:?} budget]", budgets[n - 1]) };
        println!(
            "criterion {n:>2}: {} ({}; {:.2?}){timing}",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
