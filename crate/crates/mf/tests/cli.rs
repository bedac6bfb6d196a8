use std::process::Command;

use mf::agentd::{start_agent, AgentConfig};
use mf::tap::NetTap;
use mf_core::agent::StorageMode;

fn mf() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mf"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn usage_errors_exit_with_two() {
    let out = mf().args(["poll", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = mf().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = mf().args(["simulate", "--scenario"]).arg(dir.path().join("missing")).args(["--out", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = mf().args(["dump", "--store", "nonsense", "--repo"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn poll_prints_one_binding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = AgentConfig {
        device_id: "agent-1".into(),
        storage_mode: StorageMode::Durable,
        storage_path: Some(dir.path().into()),
        ..AgentConfig::default()
    };
    let a = start_agent(cfg, NetTap::disabled()).unwrap();
    let out = mf()
        .args(["poll", "--agent", &a.http_addr.to_string(), "--oid", "1.3.6.1.2.1.1.5.0"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("1.3.6.1.2.1.1.5.0 = "), "{text}");
    assert!(lines[0].contains("agent-1"));
    a.stop();
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.scenario");
    std::fs::write(&scenario, "agents=4\nvariables=2\ntransport=datagram\nloss=0.1\nduration_ms=20000\nseed=3\n").unwrap();
    let mut docs = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let st = mf().arg("simulate").arg("--scenario").arg(&scenario).arg("--out").arg(&out).status().unwrap();
        assert!(st.success());
        docs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(docs[0], docs[1]);
    let v: serde_json::Value = serde_json::from_slice(&docs[0]).unwrap();
    assert_eq!(v["conservation"], true);
}

#[test]
fn dump_lists_a_fresh_store() {
    let dir = tempfile::tempdir().unwrap();
    let out = mf().args(["dump", "--store", "subscriptions", "--repo"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}
