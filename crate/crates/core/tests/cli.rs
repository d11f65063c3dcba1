use std::path::Path;
use std::process::Command;

use tiered_control::harness::output::read_trace_file;
use tiered_control::harness::ScenarioConfig;

fn tiered() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tiered"))
}

fn short_config(dir: &Path) -> (std::path::PathBuf, ScenarioConfig) {
    let mut cfg = ScenarioConfig::default();
    cfg.run.ticks = 60;
    let path = dir.join("short.cfg");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    (path, cfg)
}

#[test]
fn run_writes_trace_and_metrics_then_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, cfg) = short_config(dir.path());
    let out = dir.path().join("out");
    let status = tiered()
        .args(["run", "--seed", "7", "--runs", "1", "--trace", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let hash = cfg.hash();
    let trace = out.join(format!("trace_{hash}_7.csv"));
    let metrics = out.join(format!("metrics_{hash}_7.json"));
    let saved = read_trace_file(&trace).unwrap();
    assert_eq!(saved.config_hash.as_deref(), Some(hash.as_str()));
    assert_eq!(saved.seed, Some(7));
    assert_eq!(saved.samples.len(), 60);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(metrics).unwrap()).unwrap();
    assert_eq!(json["ticks"], 60);

    let check = tiered().arg("check").arg(&trace).output().unwrap();
    assert!(check.status.success());
    let report: serde_json::Value = serde_json::from_slice(&check.stdout).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["report"]["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn no_trace_writes_metrics_only() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _) = short_config(dir.path());
    let status = tiered()
        .args(["run", "--runs", "1", "--no-trace", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().any(|n| n.starts_with("metrics_")));
    assert!(!names.iter().any(|n| n.starts_with("trace_")));
}

#[test]
fn plan_prints_budgets() {
    let out = tiered().args(["plan", "--rho", "0.1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // Default links lose 80 % at D_c = 4 and D_e = 2, so a 10 % target
    // needs longer budgets.
    let budget = |tier: &str| -> u64 {
        let l = text.lines().find(|l| l.starts_with(tier)).unwrap();
        l.split("D = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
    };
    assert!(budget("cloud") > 4, "{text}");
    assert!(budget("edge") > 2, "{text}");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "[run]\nticks = 3\n").unwrap();
    let out = tiered().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
