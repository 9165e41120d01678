use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[synth]
n_subjects = 20
turns = 3

[ingest]
frames_per_subject = 4

[grid.train]
max_epochs = 3

[grid.pretext]
samples = 32
epochs = 1
"#;

fn fedvox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedvox"))
        .args(args)
        .arg("--out-dir")
        .arg(dir.join("runs"))
        .env_remove("FEDVOX_CONFIG")
        .env_remove("FEDVOX_SEED")
        .env_remove("FEDVOX_OUT_DIR")
        .env_remove("FEDVOX_WORKERS")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_features_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedvox(dir.path(), &["grid"]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"], "dependency");
    assert!(err["message"].as_str().unwrap().contains("featurize"));
}

#[test]
fn bad_flags_and_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedvox(dir.path(), &["grid", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nfolds_typo = 3\n").unwrap();
    let out = fedvox(dir.path(), &["--config", cfg.to_str().unwrap(), "grid"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn seed_precedence_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("seed.toml");
    fs::write(&cfg, "seed = 5\n[synth]\nn_subjects = 4\nturns = 1\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedvox"));
        cmd.args(["--config", cfg, "--out-dir"]).arg(dir.path().join("runs")).args(extra).arg("synth");
        cmd.env_remove("FEDVOX_SEED").env_remove("FEDVOX_OUT_DIR").env_remove("FEDVOX_CONFIG").env_remove("FEDVOX_WORKERS");
        if let Some(s) = env {
            cmd.env("FEDVOX_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let prov: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("runs/corpus/provenance.json")).unwrap()).unwrap();
        prov["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[], None), 5);
    assert_eq!(seed_of(&[], Some("6")), 6);
    assert_eq!(seed_of(&["--seed", "7"], Some("6")), 7);
}

#[test]
fn pipeline_end_to_end_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for cmd in ["synth", "ingest", "featurize"] {
        let out = fedvox(dir.path(), &["--config", &cfg, cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join("runs").read_dir().unwrap().count() > 0);
    }
    let train = ["--config", &cfg, "train-fed", "--aggregator", "fedma", "--clients", "5", "--arch", "mnv2-lite"];
    let run_dir = dir.path().join("runs/train/combined-mnv2-lite-fedma");
    let out = fedvox(dir.path(), &train);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let history: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(run_dir.join("history.json")).unwrap()).unwrap();
    assert!(!history.is_empty());
    for round in &history {
        assert_eq!(round["clients"].as_array().unwrap().len(), 5);
        assert_eq!(round["aggregator"], "fedma");
    }
    let jsonl = fs::read_to_string(run_dir.join("history.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), history.len());
    let prov: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["version"], 1);
    let first_ckpt = prov["artifacts"]["model.ckpt"].as_str().unwrap().to_string();
    let first_report = fs::read(run_dir.join("report.json")).unwrap();

    let out = fedvox(dir.path(), &train);
    assert!(out.status.success());
    let prov: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["artifacts"]["model.ckpt"].as_str().unwrap(), first_ckpt);
    assert_eq!(fs::read(run_dir.join("report.json")).unwrap(), first_report);

    let out = fedvox(dir.path(), &["--config", &cfg, "--workers", "1", "train-central", "--arch", "mnv2-lite"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("runs/train/combined-mnv2-lite-central/model.ckpt").exists());
}
