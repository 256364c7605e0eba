use std::path::Path;
use std::process::{Command, Output};

fn ascendsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ascendsim")).args(args).current_dir(dir).env_remove("ASCENDSIM_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn attack_matrix_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ascendsim(&["attack-matrix", "--seed", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("12/12 policies pass"));
    assert!(text.contains("DEBUG_PROBE"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"version\": 1, \"rounds\": \"two\"}").unwrap();
    assert_eq!(code(&ascendsim(&["run", "bad.json"], dir.path())), 2);
    assert_eq!(code(&ascendsim(&["run", "missing.json"], dir.path())), 2);
    assert_eq!(code(&ascendsim(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&ascendsim(&["estimate", "x.sealed"], dir.path())), 2);
    std::fs::write(dir.path().join("g.json"), "{\"layers\": []}").unwrap();
    assert_eq!(code(&ascendsim(&["seal", "g.json", "--key", "abcd"], dir.path())), 2);
}

#[test]
fn run_then_trace_check() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"version":1,"seed":4,"model":{"builtin":"canary_mlp"},"rounds":2,"ppi":{"budget":2}}"#,
    )
    .unwrap();
    let o = ascendsim(&["run", "s.json", "--trace", "t.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["outcome"], "OK");
    assert_eq!(summary["leaked_canaries"], 0);
    let o = ascendsim(&["trace-check", "t.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn attack_scenario_with_declared_outcome_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), r#"{"version":1,"attack":"TAMPER_PC"}"#).unwrap();
    let o = ascendsim(&["run", "s.json"], dir.path());
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["outcome"], "ATTEST_ABORT");
    assert!(dir.path().join("trace.jsonl").exists());
}

#[test]
fn decrypt_before_ack_fails_trace_check() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        r#"{"seq":0,"actor":"HOST","event":"ALLOC_REGION","region":"INPUT","page_range":{"first":0,"end":1},"status":"OK","direction":"TO_DEVICE","lifecycle":"MAPPED_ENCRYPTED"}"#,
        r#"{"seq":1,"actor":"HOST","event":"EXECUTE_MODEL","status":"OK"}"#,
        r#"{"seq":2,"actor":"AI_CPU","event":"INPUT_DECRYPT","region":"INPUT","status":"OK"}"#,
        r#"{"seq":3,"actor":"MEMORY_MANAGER","event":"UNMAP_ACK","status":"OK"}"#,
    ];
    std::fs::write(dir.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let o = ascendsim(&["trace-check", "bad.jsonl"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Atomicity"));
    std::fs::write(dir.path().join("junk.jsonl"), "{not json").unwrap();
    assert_eq!(code(&ascendsim(&["trace-check", "junk.jsonl"], dir.path())), 2);
}

#[test]
fn seal_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let graph = serde_json::to_string(&ascendsim::toolchain::OperatorGraph::matmul_2x2()).unwrap();
    std::fs::write(dir.path().join("mm.json"), graph).unwrap();
    let o = ascendsim(&["seal", "mm.json", "--key", "000102030405060708090a0b0c0d0e0f"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sealed = std::fs::read(dir.path().join("mm.sealed")).unwrap();
    assert!(ascendsim::toolchain::SealedModel::from_bytes(&sealed).is_ok());
    let o = ascendsim(&["estimate", "mm.sealed", "--input-len", "16"], dir.path());
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["analytic_only"], true);
    assert_eq!(report["tag_bytes"], 48);
    assert_eq!(report["decrypt_throughput_mbps"], 6100);
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), r#"{"version":1,"seed":1}"#).unwrap();
    let digest = |env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ascendsim"));
        cmd.args(["run", "s.json"]).current_dir(dir.path()).env_remove("ASCENDSIM_SEED");
        if let Some(v) = env {
            cmd.env("ASCENDSIM_SEED", v);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        (v["seed"].as_u64().unwrap(), v["trace_digest"].as_str().unwrap().to_owned())
    };
    let base = digest(None);
    assert_eq!(base.0, 1);
    assert_eq!(digest(Some("1")), base);
    let other = digest(Some("2"));
    assert_eq!(other.0, 2);
    assert_ne!(other.1, base.1);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ascendsim"));
    let o = cmd.args(["run", "s.json"]).current_dir(dir.path()).env("ASCENDSIM_SEED", "nope").output().unwrap();
    assert_eq!(code(&o), 2);
}
