use std::path::Path;
use std::process::{Command, Output};

fn pcalign(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcalign")).args(args).current_dir(dir).env("PCALIGN_THREADS", "1").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

const SMALL: &str = r#"
[scene]
train_count = 12
val_count = 4
test_count = 10

[gen]
procedural_cars = 4

[train]
epochs = 1
batch = 6
n_points = 24
checkpoint_every = 0

[train.network]
coarse_widths = [8, 16, 32]
fine_widths = [8, 16, 32]
embed_widths = [8, 16, 64]
head_widths = [32, 16]

[eval]
batch = 5
batch_sizes = [2, 4]
bench_points = 64
"#;

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = pcalign(&["gen", "--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--out-dir"));

    let bad = pcalign(&["gen", "--out-dir", "x", "--bogus"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--bogus"));

    let none = pcalign(&[], dir.path());
    assert_ne!(none.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.toml"), "[trian]\nepochs = 1\n").unwrap();
    let cfg = pcalign(&["--config", "bad.toml", "gen", "--out-dir", "d"], dir.path());
    assert_eq!(cfg.status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.jsonl"), "").unwrap();
    let out = pcalign(&["eval", "--pred", "p.jsonl", "--dataset", "nowhere/d.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/d.bin"));
}

fn strip_timing(mut v: serde_json::Value) -> serde_json::Value {
    for f in v["filters"].as_array_mut().unwrap() {
        f.as_object_mut().unwrap().remove("mean_wall_ms");
    }
    v
}

/// gen, train for one epoch, align and eval in a fresh directory.
fn pipeline(dir: &Path, seed: &str) -> serde_json::Value {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml", "--seed", seed];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = extra.iter().chain(&c).copied().collect();
        let out = pcalign(&args, dir);
        ok(&out);
        out
    };
    run(&["gen", "--out-dir", "data"]);
    for split in ["train", "val", "test"] {
        assert!(dir.join(format!("data/{split}.bin")).exists());
    }
    run(&["train", "--dataset", "data/train.bin", "--out-dir", "run", "--quiet"]);
    assert!(dir.join("run/final.ckpt").exists());
    assert!(dir.join("run/loss.csv").exists());
    run(&["align", "--checkpoint", "run/final.ckpt", "--dataset", "data/test.bin", "--out", "net.jsonl"]);
    run(&["eval", "--pred", "net.jsonl", "--dataset", "data/test.bin", "--csv", "report.csv"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "net");
    assert_eq!(report["filters"][0]["count"], 10);
    assert!(std::fs::read_to_string(dir.join("report.csv")).unwrap().lines().count() == 4);
    strip_timing(report)
}

#[test]
fn gen_train_eval_is_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = pipeline(a.path(), "7");
    let rb = pipeline(b.path(), "7");
    assert_eq!(ra, rb);
    for f in ["data/train.bin", "data/test.bin", "run/final.ckpt", "run/loss.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    pipeline(c.path(), "8");
    assert_ne!(std::fs::read(a.path().join("data/test.bin")).unwrap(), std::fs::read(c.path().join("data/test.bin")).unwrap());
}

#[test]
fn icp_and_bench_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    ok(&pcalign(&[&["gen", "--out-dir", "data", "--split", "test", "--noiseless"][..], &c].concat(), d));
    assert!(!d.join("data/train.bin").exists());
    ok(&pcalign(&[&["icp", "--dataset", "data/test.bin", "--out", "icp.jsonl"][..], &c].concat(), d));
    let first = std::fs::read_to_string(d.join("icp.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["sample_id", "tx", "ty", "yaw", "wall_ms", "iterations", "inlier_rmse"] {
        assert!(rec.get(key).is_some(), "{key} missing from {rec}");
    }
    ok(&pcalign(&[&["eval", "--pred", "icp.jsonl", "--dataset", "data/test.bin", "--out", "icp_report.json"][..], &c].concat(), d));

    ok(&pcalign(&[&["train", "--dataset", "data/test.bin", "--out-dir", "run", "--quiet"][..], &c].concat(), d));
    let out = pcalign(&[&["bench", "--dataset", "data/test.bin", "--checkpoint", "run/final.ckpt"][..], &c].concat(), d);
    ok(&out);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(d.join("timing.json")).unwrap()).unwrap();
    let keys: Vec<(String, u64)> =
        rows.iter().map(|r| (r["method"].as_str().unwrap().to_string(), r["batch_size"].as_u64().unwrap())).collect();
    assert_eq!(keys, [("alignnet".into(), 2), ("alignnet".into(), 4), ("icp_p2p".into(), 2), ("icp_p2p".into(), 4)]);
    assert!(rows.iter().all(|r| r["threads"] == 1));
}
