use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::mpsc;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idledraft"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["run", "--policy", "idlespec", "--seed", "7", "--tasks", "5", "--trace", "out.jsonl"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read(dir.path().join("out.jsonl"));
    assert!(trace.lines().count() > 5);
    assert!(trace.contains("\"TASK_START\""));
    let summary = read(dir.path().join("report/summary.csv"));
    assert!(summary.starts_with("policy,metric,value\n"));
}

#[test]
fn reference_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json");
    let out = run_in(
        dir.path(),
        &["run", "--config", config.to_str().unwrap(), "--tasks", "2", "--format", "json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path().join("report/report.json"))).unwrap();
    assert_eq!(report["fingerprints"].as_array().unwrap().len(), 1);
}

#[test]
fn bogus_policy_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "--policy", "bogus"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["idlespec", "vanilla", "seqrev", "sleeptime", "planning"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_config_is_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"policy":{"k_cap":0}}"#).unwrap();
    let out = run_in(dir.path(), &["run", "--config", "c.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_cap"));
    let out = run_in(dir.path(), &["run", "--config", "missing.json"]);
    assert!(!out.status.success());
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = run_in(
            dir.path(),
            &["run", "--policy", "idlespec", "--seed", "3", "--tasks", "4", "--trace", name],
        );
        assert!(out.status.success());
    }
    assert_eq!(read(dir.path().join("a.jsonl")), read(dir.path().join("b.jsonl")));
}

#[test]
fn replay_matches_online_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["run", "--policy", "all", "--tasks", "4", "--trace", "t.jsonl", "--format", "json"],
    );
    assert!(out.status.success());
    let online: serde_json::Value = serde_json::from_str(&read(dir.path().join("report/report.json"))).unwrap();
    let out = run_in(dir.path(), &["replay", "t.jsonl"]);
    assert!(out.status.success());
    let replayed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(online["tasks"], replayed["tasks"]);
    assert_eq!(online["policies"], replayed["policies"]);
    assert_eq!(online["fingerprints"], replayed["fingerprints"]);
}

#[test]
fn replay_empty_and_truncated() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = run_in(dir.path(), &["replay", "empty.jsonl"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["tasks"].as_array().unwrap().is_empty());

    let out = run_in(dir.path(), &["run", "--policy", "vanilla", "--tasks", "1", "--trace", "t.jsonl"]);
    assert!(out.status.success());
    let full = read(dir.path().join("t.jsonl"));
    let n_lines = full.lines().count();
    let cut = &full[..full.len() - 10];
    std::fs::write(dir.path().join("cut.jsonl"), cut).unwrap();
    let out = run_in(dir.path(), &["replay", "cut.jsonl"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("line {n_lines}")), "{err}");
}

#[test]
fn report_tables_for_two_policies() {
    let dir = tempfile::tempdir().unwrap();
    for (policy, trace) in [("idlespec", "i.jsonl"), ("vanilla", "v.jsonl")] {
        let out = run_in(dir.path(), &["run", "--policy", policy, "--tasks", "3", "--trace", trace]);
        assert!(out.status.success());
    }
    let out = run_in(dir.path(), &["report", "i.jsonl", "v.jsonl", "--out", "rep"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = read(dir.path().join("rep/summary.csv"));
    let mut keys: Vec<(String, String)> = summary
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    let n = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n, "one row per (policy, metric)");
    assert_eq!(n, 2 * 10);

    let split = read(dir.path().join("rep/token_split.csv"));
    let row = |p: &str| -> Vec<u64> {
        let line = split.lines().find(|l| l.starts_with(p)).unwrap();
        line.split(',').skip(1).map(|x| x.parse().unwrap()).collect()
    };
    assert!(row("IDLESPEC")[0] > 0);
    assert_eq!(row("VANILLA")[0], 0);

    let hist = read(dir.path().join("rep/tool_histogram.csv"));
    assert!(hist.starts_with("policy,bucket,lo_ms,hi_ms,count\n"));
}

#[test]
fn sweep_writes_one_trace_per_seed_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["sweep", "--seeds", "1,2", "--tasks", "2", "--out", "sw"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [1, 2] {
        for p in ["idlespec", "vanilla", "seqrev", "sleeptime", "planning"] {
            assert!(dir.path().join(format!("sw/seed-{seed}/{p}.jsonl")).exists());
        }
    }
    let rows = read(dir.path().join("sw/sweep.csv"));
    assert_eq!(rows.lines().count(), 1 + 2 * 5 * 10);
}

/// Minimal chat-completions server: answers every request with a final
/// answer and reports the request headers back over `seen`.
fn stub_server(seen: mpsc::Sender<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                head.push_str(&line);
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let _ = seen.send(head);
            let payload = serde_json::json!({
                "choices": [{"message": {"content": "Thought: done\nAction: final_answer {\"answer\":\"42\"}"}}],
                "usage": {"prompt_tokens": 11, "completion_tokens": 7}
            })
            .to_string();
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

#[test]
fn live_client_against_local_server() {
    let (tx, rx) = mpsc::channel();
    let endpoint = stub_server(tx);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("live.json"),
        r#"{"model":{"kind":"live","name":"stub","timeout_ms":5000},
            "tasks":{"chain_length":[1,1],"tool_latency":{"kind":"constant","ms":0}}}"#,
    )
    .unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("MODEL_ENDPOINT", &endpoint)
        .env("MODEL_API_KEY", "sk-test-secret")
        .args(["run", "--config", "live.json", "--policy", "vanilla", "--tasks", "1", "--trace", "t.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let head = rx.recv().unwrap();
    assert!(head.contains("Bearer sk-test-secret"), "{head}");
    let trace = read(dir.path().join("t.jsonl"));
    assert!(!trace.contains("sk-test-secret"));
    let main = trace.lines().find(|l| l.contains("\"MAIN_GEN\"")).unwrap();
    let event: serde_json::Value = serde_json::from_str(main).unwrap();
    assert_eq!(event["payload"]["tokens"], 18);
}

#[test]
fn live_without_endpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("live.json"), r#"{"model":{"kind":"live"}}"#).unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env_remove("MODEL_ENDPOINT")
        .args(["run", "--config", "live.json", "--tasks", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("MODEL_ENDPOINT"));
}
