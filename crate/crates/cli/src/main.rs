//! `idledraft`: run simulations, replay traces and emit reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use idledraft_core::config::{Config, ModelKind};
use idledraft_core::live::HttpClient;
use idledraft_core::metrics::aggregate_by_policy;
use idledraft_core::orchestrator::PolicyKind;
use idledraft_core::report::{build_report, csv_tables, RunReport};
use idledraft_core::sim::{generate_tasks, run_policy, Backend};
use idledraft_core::trace::{read_trace, JsonlSink, MemorySink, Tee, TraceEvent, TraceSink};

#[derive(Parser)]
#[command(name = "idledraft", version, about = "Idle-time drafting simulator and trace tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scenario and write a trace plus report.
    Run(RunArgs),
    /// Recompute metrics from a trace file.
    Replay(ReplayArgs),
    /// Build report tables from one or more trace files.
    Report(ReportArgs),
    /// Run every policy over a list of seeds.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// A policy name, or `all`.
#[derive(Clone, Debug)]
struct PolicyArg(Vec<PolicyKind>);

fn parse_policy(s: &str) -> Result<PolicyArg, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(PolicyArg(PolicyKind::ALL.to_vec()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<PolicyKind>())
        .collect::<Result<Vec<_>, _>>()
        .map(PolicyArg)
}

#[derive(Args)]
struct ScenarioArgs {
    /// JSON config; every field defaults to the reference config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy name, comma-separated list, or `all`. Defaults to `policy.kind`.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `sim.n_tasks`.
    #[arg(long)]
    tasks: Option<usize>,
    /// Record prompts and outputs verbatim instead of content hashes.
    #[arg(long)]
    log_full_text: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated seeds or an inclusive range such as `1-5`.
    #[arg(long, default_value = "1-5")]
    seeds: String,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed '{x}'")))
        .collect()
}

fn load_config(args: &ScenarioArgs) -> Result<(Config, Vec<PolicyKind>)> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(n) = args.tasks {
        cfg.sim.n_tasks = n;
    }
    let policies = match &args.policy {
        Some(p) => p.0.clone(),
        None => vec![cfg.policy.kind],
    };
    if let [only] = policies.as_slice() {
        cfg.policy.kind = *only;
    }
    cfg.validate()?;
    Ok((cfg, policies))
}

/// Runs `policies` in order, streaming events into `sink`. Returns the
/// report with task rows taken from the online metrics.
fn simulate(cfg: &Config, policies: &[PolicyKind], full_text: bool, sink: &mut dyn TraceSink) -> Result<RunReport> {
    let tasks = generate_tasks(cfg)?;
    let live = match cfg.model.kind {
        ModelKind::Live => Some(HttpClient::from_env(&cfg.model.name, cfg.model.timeout_ms)?),
        ModelKind::Scripted => None,
    };
    let backend = match &live {
        Some(client) => Backend::Live(client),
        None => Backend::Simulated,
    };
    let mut memory = MemorySink::default();
    let mut online = Vec::new();
    for &p in policies {
        let mut tee = Tee {
            first: &mut *sink,
            second: &mut memory,
        };
        let run = run_policy(cfg, p, &tasks, backend, full_text, &mut tee);
        // flush whatever was recorded before reporting a failure
        sink.flush()?;
        online.extend(run?.metrics);
    }
    let mut report = build_report(&memory.events);
    report.policies = aggregate_by_policy(&online);
    report.tasks = online;
    Ok(report)
}

fn open_trace(path: &Path) -> Result<JsonlSink<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(JsonlSink::new(BufWriter::new(file)))
}

fn read_events(paths: &[PathBuf]) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for path in paths {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        let evs = read_trace(BufReader::new(file)).with_context(|| format!("{}", path.display()))?;
        events.extend(evs);
    }
    Ok(events)
}

fn write_report(report: &RunReport, out: &Path, format: Format) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match format {
        Format::Csv => {
            for (name, body) in csv_tables(report)? {
                std::fs::write(out.join(name), body)?;
            }
        }
        Format::Json => {
            let text = serde_json::to_string_pretty(report)?;
            std::fs::write(out.join("report.json"), text + "\n")?;
        }
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!("policy,n_tasks,success_rate,mean_wall_ms,mean_itu,tokens_idle,tokens_test");
    for (policy, s) in &report.policies {
        let o = &s.overall;
        println!(
            "{policy},{},{},{},{},{},{}",
            o.n_tasks, o.success_rate, o.wall_ms, o.itu, o.tokens_idle, o.tokens_test
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (cfg, policies) = load_config(&args.scenario)?;
    let mut sink = open_trace(&args.trace)?;
    let report = simulate(&cfg, &policies, args.scenario.log_full_text, &mut sink)?;
    sink.flush()?;
    write_report(&report, &args.out, args.format)?;
    print_summary(&report);
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let events = read_events(std::slice::from_ref(&args.trace))?;
    let report = build_report(&events);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        Format::Csv => {
            let (_, tasks) = csv_tables(&report)?
                .into_iter()
                .find(|(name, _)| *name == "tasks.csv")
                .expect("tasks table");
            out.write_all(tasks.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let events = read_events(&args.traces)?;
    let report = build_report(&events);
    write_report(&report, &args.out, args.format)?;
    print_summary(&report);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (base, policies) = match &args.scenario.policy {
        Some(_) => load_config(&args.scenario)?,
        None => (load_config(&args.scenario)?.0, PolicyKind::ALL.to_vec()),
    };
    let seeds = parse_seeds(&args.seeds)?;
    std::fs::create_dir_all(&args.out)?;
    let mut rows = String::from("seed,policy,metric,value\n");
    for seed in seeds {
        let mut cfg = base.clone();
        cfg.sim.seed = seed;
        for &policy in &policies {
            // one writer per trace file
            let path = args.out.join(format!("seed-{seed}")).join(format!("{}.jsonl", policy.as_str().to_ascii_lowercase()));
            let mut sink = open_trace(&path)?;
            let report = simulate(&cfg, &[policy], args.scenario.log_full_text, &mut sink)?;
            for (p, s) in &report.policies {
                for (metric, value) in s.overall.fields() {
                    rows.push_str(&format!("{seed},{p},{metric},{value}\n"));
                }
            }
        }
    }
    std::fs::write(args.out.join("sweep.csv"), rows)?;
    println!("wrote {}", args.out.join("sweep.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
