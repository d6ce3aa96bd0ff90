use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use serde_json::{json, Value};

fn cvtk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvtk")).args(args).env("RUST_LOG", "warn").output().expect("run cvtk")
}

fn ok(args: &[&str]) -> String {
    let out = cvtk(args);
    assert!(out.status.success(), "cvtk {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Stripes encode the class: horizontal for 0, vertical for 1. `k` varies colour
/// and phase; a faint noise layer keeps the perceptual hashes of the images apart.
fn stripes(class: usize, k: u32) -> RgbImage {
    let period = 4 + k % 5;
    let (a, b) = ([(k * 37 % 80) as u8, 20, 40], [220, (150 + k * 13 % 100) as u8, 200]);
    let grain = noise(5000 + k, 32);
    RgbImage::from_fn(32, 32, |x, y| {
        let t = if class == 0 { y } else { x };
        let base = if ((t + k) / (period / 2).max(1)) % 2 == 0 { a } else { b };
        let g = grain.get_pixel(x, y).0;
        Rgb([0, 1, 2].map(|c| (base[c] as u32 * 3 / 4 + g[c] as u32 / 4) as u8))
    })
}

/// Pseudo-random noise that hashes far from every other seed.
fn noise(seed: u32, size: u32) -> RgbImage {
    let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
    RgbImage::from_fn(size, size, |_, _| {
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            (state >> 24) as u8
        };
        Rgb([next(), next(), next()])
    })
}

/// `n` stripe images with an informativeness label per image.
fn labeled_dir(dir: &Path, n: usize) -> PathBuf {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut lines = vec![json!({"schema_version": "1"}).to_string()];
    for i in 0..n {
        let class = i % 2;
        let name = format!("img/s{i:03}.png");
        stripes(class, i as u32).save(dir.join(&name)).unwrap();
        let label = ["informative", "not informative"][class];
        lines.push(json!({"record_id": format!("s{i:03}"), "source_dataset": "toy", "image_ref": name, "labels": {"informativeness": label}}).to_string());
    }
    let path = dir.join("all.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn tiny_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = json!({"backbone": "tinycnn", "pretrained": false, "image_size": 32, "max_epochs": epochs, "plateau_patience": epochs.saturating_sub(1).clamp(1, 10), "learning_rate": 1e-3, "seed": 1});
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn manifest_validate_flags_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    let good = labeled_dir(dir.path(), 3);
    let out = cvtk(&["manifest", "validate", s(&good)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("3 valid record(s), 0 rejected"));

    let bad = dir.path().join("bad.jsonl");
    let mut text = fs::read_to_string(&good).unwrap();
    text.push_str(&json!({"record_id": "x", "image_ref": "x.png", "labels": {"informativeness": 9}}).to_string());
    fs::write(&bad, text).unwrap();
    let out = cvtk(&["manifest", "validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("3 valid record(s), 1 rejected"));
}

#[test]
fn split_train_predict_eval_compare_explain_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let all = labeled_dir(d, 40);
    let split = d.join("split");
    ok(&["curate", "split", s(&all), "--stratify", "informativeness", "--seed", "3", "--out", s(&split)]);
    let sizes: Vec<usize> = ["train", "dev", "test"]
        .iter()
        .map(|n| jsonl(&split.join(format!("{n}.jsonl"))).len() - 1)
        .collect();
    assert_eq!(sizes.iter().sum::<usize>(), 40);
    assert!(split.join("stats.json").exists() && split.join("duplicate_groups.json").exists());
    let stats = ok(&["curate", "stats", s(&split), "--tasks", "info"]);
    assert!(stats.contains("informative"));

    let cfg = tiny_config(d, 3);
    let ck = d.join("ck");
    let (train, dev, test) = (split.join("train.jsonl"), split.join("dev.jsonl"), split.join("test.jsonl"));
    ok(&["train", "--task", "informativeness", "--train", s(&train), "--dev", s(&dev), "--config", s(&cfg), "--out", s(&ck)]);
    assert!(ck.join("meta.json").exists() && ck.join("history.csv").exists());

    let preds = d.join("preds.jsonl");
    ok(&["predict", "--checkpoint", s(&ck), "--manifest", s(&test), "--out", s(&preds)]);
    let lines = jsonl(&preds);
    assert_eq!(lines.len(), sizes[2]);
    assert!(lines[0]["predictions"]["informativeness"]["probs"].as_array().unwrap().len() == 2);

    let report = d.join("eval.json");
    ok(&["eval", "--preds", s(&preds), "--gold", s(&test), "--json", s(&report)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let f1 = report["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let matrix = d.join("matrix.json");
    ok(&["compare", "--preds", s(&preds), s(&preds), "--gold", s(&test), "--json", s(&matrix)]);
    let matrix: Value = serde_json::from_str(&fs::read_to_string(&matrix).unwrap()).unwrap();
    assert_eq!(matrix["cells"][0][1]["p_value"].as_f64(), Some(1.0));

    let cam = d.join("cam.png");
    ok(&["explain", "--checkpoint", s(&ck), "--image", s(&d.join("img/s000.png")), "--out", s(&cam)]);
    assert_eq!(image::open(&cam).unwrap().to_rgb8().dimensions(), (32, 32));

    let svg = d.join("curves.svg");
    ok(&["plot", s(&ck.join("history.csv")), "--out", s(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn complexity_table_lists_backbones() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("c.json");
    let out = ok(&["complexity", "--json", s(&json_path)]);
    assert!(out.contains("ResNet18") && out.contains("EfficientNet (b1)"));
    let rows: Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let resnet = rows.as_array().unwrap().iter().find(|r| r["backbone"] == "resnet18").unwrap();
    assert_eq!(resnet["params"].as_u64(), Some(11_177_538));
}

fn untrained_multitask_checkpoint(d: &Path) -> PathBuf {
    let all = labeled_dir(&d.join("toy"), 8);
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(tiny_config(d, 2)).unwrap()).unwrap();
    cfg["learning_rate"] = json!(1e-9);
    let cfg_path = d.join("mt.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let ck = d.join("mt");
    ok(&["train-multitask", "--tasks", "all", "--train", s(&all), "--dev", s(&all), "--config", s(&cfg_path), "--out", s(&ck)]);
    ck
}

#[test]
fn pipeline_run_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ck = untrained_multitask_checkpoint(d);
    let src = d.join("stream");
    fs::create_dir_all(&src).unwrap();
    for i in 0..3 {
        noise(i, 40).save(src.join(format!("n{i}.png"))).unwrap();
    }
    fs::copy(src.join("n1.png"), src.join("n9_copy.png")).unwrap();
    let out = d.join("records.jsonl");
    ok(&["pipeline", "run", "--checkpoint", s(&ck), "--source", s(&src), "--out", s(&out)]);
    let recs = jsonl(&out);
    assert_eq!(recs.len(), 4);
    for r in &recs[..3] {
        assert_eq!(r["predictions"].as_object().unwrap().len(), 4);
    }
    assert_eq!(recs[3]["duplicate_of"], "n1.png");
    let summary: Value = serde_json::from_str(&fs::read_to_string(d.join("records.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["images"], 4);
}

#[test]
fn killed_pipeline_leaves_a_valid_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ck = untrained_multitask_checkpoint(d);
    let src = d.join("stream");
    fs::create_dir_all(&src).unwrap();
    for i in 0..600 {
        noise(1000 + i, 160).save(src.join(format!("k{i:04}.png"))).unwrap();
    }
    let out = d.join("records.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_cvtk"))
        .args(["pipeline", "run", "--checkpoint", s(&ck), "--source", s(&src), "--out", s(&out), "--batch-size", "1"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while fs::read_to_string(&out).map_or(0, |t| t.lines().count()) < 5 && start.elapsed() < Duration::from_secs(60) {
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    let status = child.wait().unwrap();
    assert!(!status.success(), "run finished before it could be interrupted");

    let text = fs::read_to_string(&out).unwrap();
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let recs: Vec<Value> = complete.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(recs.len() >= 5 && recs.len() < 600, "{} records", recs.len());
    // Records arrive in source order with no gaps.
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r["record_id"], format!("k{i:04}.png"));
        assert_eq!(r["predictions"].as_object().unwrap().len(), 4);
    }
    // Anything after the last newline is a line cut mid-write; flushes happen per record, so there is none.
    assert_eq!(complete.len(), text.len());
}
