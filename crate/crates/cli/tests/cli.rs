use std::path::Path;
use std::process::{Command, Output};

fn acpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acpp")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = acpp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"{
  "seed": 1,
  "model": {"base_width": 4, "latent_dim": 16},
  "data": {"train_count": 24, "validation_count": 3, "labeled_ratio": 0.25},
  "pretrain_iters": 3,
  "finetune_iters": 4,
  "log_every": 1,
  "eval": {"every": 2, "feature_images": 3, "alignment_pairs": 1}
}"#;

fn write_config(dir: &Path, data_path: Option<&Path>) -> String {
    let mut v: serde_json::Value = serde_json::from_str(SMALL).unwrap();
    if let Some(p) = data_path {
        v["data"]["path"] = serde_json::Value::String(p.to_str().unwrap().into());
    }
    let path = dir.join("config.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = write_config(dir.path(), None);

    ok(&["gen-data", "--config", &cfg, "--out", &d("data")]);
    assert!(dir.path().join("data/dataset.acpp").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["class_frequencies"].as_array().unwrap().len(), 4);

    let cfg = write_config(dir.path(), Some(&dir.path().join("data/dataset.acpp")));
    ok(&["centers", "--config", &cfg, "--seed", "2", "--out", &d("centers")]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("centers/centers.json")).unwrap()).unwrap();
    assert_eq!(summary["K"], 4);
    assert!((summary["max_pairwise_inner_product"].as_f64().unwrap() + 1.0 / 3.0).abs() < 1e-3);

    ok(&["pretrain", "--config", &cfg, "--out", &d("pre"), "--stop-at", "2"]);
    ok(&["pretrain", "--resume", &d("pre/pretrain.acpp"), "--out", &d("pre")]);
    let log = std::fs::read_to_string(dir.path().join("pre/pretrain_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);

    ok(&[
        "finetune",
        "--config",
        &cfg,
        "--out",
        &d("ft"),
        "--pretrained",
        &d("pre/pretrain.acpp"),
        "--centers",
        &d("centers/centers.acpp"),
    ]);
    let out = ok(&["eval", "--checkpoint", &d("ft/finetune.acpp"), "--out", &d("eval")]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["iteration"], 4);
    let csv = std::fs::read_to_string(dir.path().join("eval/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn gradcheck_reports_every_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["gradcheck", "--seed", "4", "--instances", "5", "--out", out]);
    for name in ["uniformity", "instance", "anco", "aaco", "dice_ce", "pseudo_ce"] {
        assert!(stdout.contains(name), "{name} missing from {stdout}");
    }
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let out = acpp(&["gen-data", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = write_config(dir.path(), None);
    ok(&["pretrain", "--config", &cfg, "--out", &d("pre"), "--stop-at", "1"]);
    let path = dir.path().join("pre/pretrain.acpp");
    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.len() - 40;
    bytes[at] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let out = acpp(&["pretrain", "--resume", path.to_str().unwrap(), "--out", &d("pre")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("crc-32"));
}
