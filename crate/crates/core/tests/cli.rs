use std::path::Path;
use std::process::{Command, Output};

use crackseg::checkpoint;
use crackseg::data::write_gray;
use crackseg::{Model, RunConfig};
use serde_json::Value;

fn crackseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crackseg")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = crackseg(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const MICRO: &str = r#"{"network": {"embed_dim": 8, "state_dim": 4, "num_layers": 2, "image_height": 32, "image_width": 32},
  "optim": {"steps": 2, "batch_size": 2}}"#;

#[test]
fn scan_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["scan", "--strategy", "sass", "--height", "2", "--width", "2", "--paths", "4"], dir.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["paths"][0]["order"], serde_json::json!([0, 2, 3, 1]));
    assert_eq!(v["H"], 2);

    ok(&["scan-dump", "--strategy", "diagonal-snake", "--height", "1", "--width", "1", "--out", "one.json"], dir.path());
    let v = read_json(&dir.path().join("one.json"));
    for p in v["paths"].as_array().unwrap() {
        assert_eq!(p["order"], serde_json::json!([0]));
    }

    let bad = crackseg(&["scan", "--strategy", "zigzag", "--height", "2", "--width", "2", "--out", "bad.json"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown scan strategy"));
    assert!(!dir.path().join("bad.json").exists());
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.json"), MICRO).unwrap();
    ok(&["synth", "--count", "3", "--out", "ds", "--height", "32", "--width", "32", "--seed", "5"], d);

    ok(&["train", "--config", "run.json", "--data", "ds", "--out", "a.ckpt"], d);
    ok(&["train", "--config", "run.json", "--data", "ds", "--out", "b.ckpt"], d);
    assert_eq!(std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("b.ckpt")).unwrap());
    assert_eq!(std::fs::read(d.join("a.log.json")).unwrap(), std::fs::read(d.join("b.log.json")).unwrap());
    let log = read_json(&d.join("a.log.json"));
    assert!(log["entries"][0]["train_f1"].is_number());

    ok(&["infer", "--ckpt", "a.ckpt", "--input", "ds/image", "--out", "p1", "--mask", "m1"], d);
    ok(&["infer", "--ckpt", "a.ckpt", "--input", "ds/image", "--out", "p2"], d);
    for id in ["synth_000005", "synth_000006", "synth_000007"] {
        let a = std::fs::read(d.join("p1").join(format!("{id}.png"))).unwrap();
        assert_eq!(a, std::fs::read(d.join("p2").join(format!("{id}.png"))).unwrap());
        let img = image::open(d.join("p1").join(format!("{id}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }

    ok(&["eval", "--pred", "p1", "--gt", "ds", "--out", "r1.json"], d);
    ok(&["eval", "--pred", "p1", "--gt", "ds/mask", "--out", "r2.json"], d);
    assert_eq!(std::fs::read(d.join("r1.json")).unwrap(), std::fs::read(d.join("r2.json")).unwrap());
    let r = read_json(&d.join("r1.json"));
    for k in ["ods", "ois", "precision", "recall", "f1", "miou"] {
        let v = r[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k}");
    }

    ok(&["eval", "--pred", "ds/mask", "--gt", "ds", "--out", "same.json"], d);
    let r = read_json(&d.join("same.json"));
    for k in ["ods", "ois", "precision", "recall", "f1", "miou"] {
        assert_eq!(r[k].as_f64().unwrap(), 1.0, "{k}");
    }
}

#[test]
fn zero_steps_checkpoint_is_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.json"), MICRO).unwrap();
    ok(&["train", "--config", "run.json", "--synthetic", "2", "--steps", "0", "--seed", "9", "--out", "z.ckpt"], d);
    let cfg = RunConfig::load(&d.join("run.json")).unwrap();
    let fresh = Model::new(cfg.network.clone(), 9).unwrap();
    assert_eq!(std::fs::read(d.join("z.ckpt")).unwrap(), checkpoint::encode(&fresh.config, &fresh.store));

    let out = ok(&["count", "--config", "run.json", "--ckpt", "z.ckpt"], d);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["total_params"], v["checkpoint_params"]);
    assert_eq!(v["total_params"].as_u64().unwrap() as usize, fresh.param_count());
}

#[test]
fn infer_rejects_indivisible_image() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.json"), MICRO).unwrap();
    ok(&["train", "--config", "run.json", "--synthetic", "2", "--steps", "0", "--out", "z.ckpt"], d);
    ok(&["synth", "--count", "1", "--out", "odd", "--height", "30", "--width", "32"], d);
    let out = crackseg(&["infer", "--ckpt", "z.ckpt", "--input", "odd/image/synth_000042.png", "--out", "p.png"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiples of 8"));
}

#[test]
fn eval_hand_counted_case_and_id_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_gray(&d.join("pred/a.png"), 2, 2, vec![230, 102, 153, 26]).unwrap();
    write_gray(&d.join("gt/a.png"), 2, 2, vec![255, 255, 0, 0]).unwrap();
    let out = ok(&["eval", "--pred", "pred", "--gt", "gt", "--thresholds", "0.5"], d);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["precision"], 0.5);
    assert_eq!(v["recall"], 0.5);
    assert_eq!(v["f1"], 0.5);
    assert!((v["miou"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);

    write_gray(&d.join("other/b.png"), 2, 2, vec![0; 4]).unwrap();
    assert_eq!(crackseg(&["eval", "--pred", "other", "--gt", "gt"], d).status.code(), Some(2));
    write_gray(&d.join("pred/c.png"), 2, 2, vec![0; 4]).unwrap();
    let out = crackseg(&["eval", "--pred", "pred", "--gt", "gt"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("c"));
}

#[test]
fn ablate_loss_ratio_axis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.json"), MICRO).unwrap();
    ok(&["ablate", "--axis", "loss-ratio", "--config", "run.json", "--synthetic", "2", "--steps", "1", "--out", "r.json", "--csv", "r.csv"], d);
    let v = read_json(&d.join("r.json"));
    let labels: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert!(labels.contains(&"1:5") && labels.contains(&"5:1"));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), labels.len() + 1);
    assert_eq!(crackseg(&["ablate", "--axis", "depth"], d).status.code(), Some(2));
}

#[test]
fn shipped_toy_config_is_the_builtin_one() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::toy());
}
