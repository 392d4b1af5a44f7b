use std::path::Path;
use std::process::{Command, Output};

fn stnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stnet")).args(args).env_remove("STNET_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = stnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn describe_reproduces_head_and_backbone_counts() {
    let txb = ok(&["describe", "--spec", "txb-head-irv2"]);
    assert!(txb.lines().any(|l| l.starts_with("total params: 4,620,688")), "{txb}");
    let r50 = ok(&["describe", "--spec", "stnet-resnet50", "--t", "25", "--n", "5", "--res", "256"]);
    assert!(r50.contains("total params: 33,154,768 (33.15M)"));
    assert!(r50.contains("total mults: 189,268,608,000 (189.27G)"));
}

#[test]
fn describe_json_matches_the_table() {
    let json: serde_json::Value = serde_json::from_str(&ok(&["describe", "--spec", "stnet-toy", "--json"])).unwrap();
    let table = ok(&["describe", "--spec", "stnet-toy"]);
    let params = json["total_params"].as_u64().unwrap();
    let mults = json["total_mults"].as_u64().unwrap();
    assert!(table.contains(&format!("total params: {}", stnet::complexity::group_digits(params))));
    assert!(table.contains(&format!("total mults: {}", stnet::complexity::group_digits(mults))));
}

#[test]
fn describe_overrides_change_the_counted_geometry() {
    let base: serde_json::Value = serde_json::from_str(&ok(&["describe", "--spec", "stnet-toy", "--json"])).unwrap();
    let more: serde_json::Value = serde_json::from_str(&ok(&["describe", "--spec", "stnet-toy", "--json", "--classes", "10", "--res", "64"])).unwrap();
    assert_eq!(more["resolution"], serde_json::json!([64, 64]));
    assert!(more["total_params"].as_u64() > base["total_params"].as_u64());
}

#[test]
fn describe_accepts_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mine.arch");
    std::fs::write(&path, stnet::graph::ArchSpec::preset("txb-head-irv2").unwrap().to_text()).unwrap();
    assert!(ok(&["describe", "--spec", p(&path)]).contains("4,620,688"));
}

#[test]
fn errors_exit_nonzero() {
    let out = stnet(&["describe", "--spec", "resnet9000"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stnet-toy") && err.contains("txb-head-irv2"), "{err}");
    assert!(!stnet(&["frobnicate"]).status.success());
    assert!(!stnet(&["describe", "--spec", "stnet-toy", "--bogus"]).status.success());
    assert!(!stnet(&["eval", "--model", "/nonexistent", "--data", "/nonexistent"]).status.success());
}

#[test]
fn gen_data_is_reproducible_and_prints_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.stvd"), dir.path().join("b.stvd"));
    let cfg = dir.path().join("data.cfg");
    std::fs::write(&cfg, "clips_per_class = 3\nseed = 5\n").unwrap();
    let out = ok(&["gen-data", "--config", p(&cfg), "--out", p(&a)]);
    assert!(out.contains("seed: 5"));
    ok(&["gen-data", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(stnet::data::read_dataset(&a).unwrap().len(), 18);
    let over = ok(&["gen-data", "--config", p(&cfg), "--out", p(&b), "--seed", "6"]);
    assert!(over.contains("seed: 6"));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_environment_variable_replaces_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.stvd");
    let run = Command::new(env!("CARGO_BIN_EXE_stnet"))
        .args(["gen-data", "--out", p(&out), "--clips-per-class", "1"])
        .env("STNET_SEED", "77")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&run.stdout).contains("seed: 77"));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.stvd");
    let model = dir.path().join("m.ckpt");
    ok(&["gen-data", "--out", p(&data), "--clips-per-class", "2"]);
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "epochs = 5\nbatch_size = 4\nseed = 3\n").unwrap();
    let first = ok(&["train", "--spec", "stnet-toy", "--data", p(&data), "--config", p(&cfg), "--out", p(&model), "--epochs", "1"]);
    assert!(first.contains("seed: 3"));
    assert_eq!(first.matches("epoch ").count(), 1, "flags override the config file");
    let again = ok(&["train", "--spec", "stnet-toy", "--data", p(&data), "--config", p(&cfg), "--out", p(&model), "--epochs", "1"]);
    let final_line = |s: &str| s.lines().find(|l| l.starts_with("final loss")).unwrap().to_string();
    assert_eq!(final_line(&first), final_line(&again));
    assert!(dir.path().join("m.ckpt.spec").exists());
    let csv = std::fs::read_to_string(dir.path().join("m.ckpt.loss.csv")).unwrap();
    assert!(csv.starts_with("step,loss\n"));

    let table = ok(&["eval", "--model", p(&model), "--data", p(&data)]);
    let json: serde_json::Value = serde_json::from_str(&ok(&["eval", "--model", p(&model), "--data", p(&data), "--json"])).unwrap();
    assert!(table.contains(&format!("top-1       {:.4}", json["top1"].as_f64().unwrap())));
    assert_eq!(json["confusion"].as_array().unwrap().len(), 6);
    assert!(!stnet(&["eval", "--model", p(&model), "--data", p(&data), "--spec", "tsn-toy"]).status.success());
}

#[test]
fn gradcheck_reports_every_op_below_tolerance() {
    let out = ok(&["gradcheck", "--instances", "3"]);
    for op in stnet::ops::OP_NAMES {
        assert!(out.lines().any(|l| l.starts_with(op)), "{op} missing");
    }
    let json: serde_json::Value = serde_json::from_str(&ok(&["gradcheck", "--op", "conv2d", "--json"])).unwrap();
    assert!(json["reports"][0]["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(!stnet(&["gradcheck", "--op", "nope"]).status.success());
}

#[test]
fn ablate_writes_a_four_row_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.stvd");
    let out = dir.path().join("ablation.json");
    ok(&["gen-data", "--out", p(&data), "--clips-per-class", "5"]);
    let table = ok(&["ablate", "--data", p(&data), "--spec", "stnet-toy", "--out", p(&out), "--epochs", "1", "--batch-size", "8"]);
    assert!(table.contains("seed: 0"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
}
