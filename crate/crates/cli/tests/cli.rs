use std::fs;
use std::path::Path;
use std::process::Command;

use ddimlab::checkpoint::Checkpoint;
use ddimlab::DenoiserNet;
use ddimlab_cli::config::RunConfig;
use serde_json::{json, Value};

/// A configuration small enough to train in well under a second.
fn small_config() -> Value {
    json!({
        "run_seed": 3,
        "dataset": { "type": "two-moons", "n": 256, "noise": 0.05 },
        "schedule": { "kind": { "type": "linear", "beta_min": 1e-4, "beta_max": 0.02 }, "steps": 20 },
        "net": { "widths": [16, 16] },
        "train": { "epochs": 2, "batch_size": 64 },
        "generate": { "n": 32, "k": 5 },
        "gravmap": { "grid": { "bounds": [[-3, 3], [-3, 3]], "resolution": 11 }, "k": 5, "probes": 4, "profile_points": 20 }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let p = dir.join("config.in.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn run(cfg: &str, out: &Path, command: &str) -> i32 {
    ddimlab_cli::run(["ddimlab", command, "--config", cfg, "--out", out.to_str().unwrap(), "--no-timestamp"])
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn small_config_parses() {
    RunConfig::from_json(&small_config().to_string()).expect("test config is valid");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    for run_dir in ["a", "b"] {
        let out = dir.path().join(run_dir);
        assert_eq!(run(&cfg, &out, "train"), 0);
        assert_eq!(run(&cfg, &out, "generate"), 0);
    }
    for file in ["checkpoint.json", "loss.csv", "generated.csv", "generated.svg", "config.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
}

#[test]
fn zero_samples_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["generate"]["n"] = json!(0);
    let cfg = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    assert_eq!(run(&cfg, &out, "train"), 0);
    assert_eq!(run(&cfg, &out, "generate"), 0);
    let csv = fs::read_to_string(out.join("generated.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "expected only a header, got {csv:?}");
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["train"]["epochs"] = json!(1);
    cfg["train"]["optimizer"] = json!({ "lr": 0.0 });
    let parsed = RunConfig::from_json(&cfg.to_string()).unwrap();
    let cfg_path = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    assert_eq!(run(&cfg_path, &out, "train"), 0);

    let (_, trained) = Checkpoint::load_net(out.join("checkpoint.json")).unwrap();
    let init = DenoiserNet::init(2, &parsed.net, parsed.run_seed).unwrap();
    for (a, b) in trained.mlp.params().iter().zip(init.mlp.params()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn corrupted_checkpoint_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    assert_eq!(run(&cfg, &out, "train"), 0);

    let path = out.join("checkpoint.json");
    let text = fs::read_to_string(&path).unwrap();
    // Flip one mantissa digit of the first parameter value.
    let params = text.find("\"params\"").unwrap();
    let at = params + text[params..].find('.').unwrap() + 5;
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'1' { b'2' } else { b'1' };
    fs::write(&path, bytes).unwrap();

    assert_eq!(run(&cfg, &out, "generate"), 1);
}

#[test]
fn zero_tau_assigns_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["gravmap"]["tau"] = json!(0.0);
    let cfg = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    assert_eq!(run(&cfg, &out, "train"), 0);
    assert_eq!(run(&cfg, &out, "gravmap"), 0);
    let summary = read_json(&out.join("gravmap_summary.json"));
    assert_eq!(summary["grid_points"], json!(121));
    assert_eq!(summary["assigned"], json!(0));
}

#[test]
fn pca_of_two_seed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds.csv");
    fs::write(&seeds, "z0,z1\n1,0\n-1,0\n").unwrap();
    let cfg = write_config(dir.path(), &json!({ "pca": { "cloud": seeds } }));
    let out = dir.path().join("run");
    assert_eq!(run(&cfg, &out, "pca"), 0);
    let summary = read_json(&out.join("pca_summary.json"));
    let ev: Vec<f64> = serde_json::from_value(summary["per_cloud"][0]["eigenvalues"].clone()).unwrap();
    assert!((ev[0] - 2.0).abs() < 1e-12 && ev[1].abs() < 1e-12, "eigenvalues {ev:?}");
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let unknown = write_config(dir.path(), &json!({ "no_such_key": 1 }));
    assert_eq!(run(&unknown, &out, "train"), 2);

    let missing = dir.path().join("absent.json");
    assert_eq!(run(missing.to_str().unwrap(), &out, "train"), 2);

    let bad_value = write_config(dir.path(), &json!({ "schedule": { "kind": { "type": "linear", "beta_min": 1e-4, "beta_max": 0.02 }, "steps": 0 } }));
    assert_eq!(run(&bad_value, &out, "train"), 2);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ddimlab");
    let status = Command::new(exe).arg("no-such-command").output().unwrap().status;
    assert_eq!(status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let output = Command::new(exe).args(["generate", "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(1), "missing checkpoint is a runtime failure");
    assert!(String::from_utf8_lossy(&output.stderr).contains("checkpoint"));
}
