use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn evovit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evovit"))
        .args(args)
        .env_remove("EVO_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(out: &Path) -> Value {
    json!({
        "encoder": {
            "image_side": 16, "patch_side": 4, "channels_in": 1, "embed_dim": 16,
            "heads": 2, "depth": 4, "num_classes": 4
        },
        "evo": { "keep_ratio": 0.5, "start_layer": 2 },
        "train": { "model": "evo", "epochs": 2, "batch_size": 8, "seed": 3 },
        "dataset": { "synthetic": { "classes": 4, "samples": 32, "side": 16, "seed": 5, "eval_samples": 12 } },
        "output_dir": out,
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

/// Trains the small config into `tmp/run` and returns (config path, run dir).
fn trained(tmp: &TempDir) -> (PathBuf, PathBuf) {
    let run = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "run.json", &small_config(&run));
    let o = evovit(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    (cfg, run)
}

#[test]
fn train_writes_run_directory_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (cfg, run) = trained(&tmp);
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let lines: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i);
        for key in ["mode", "loss", "acc_train", "acc_eval", "seconds"] {
            assert!(l.get(key).is_some(), "missing {key}");
        }
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["finished_unix"].is_f64());
    assert!(run.join("reports/flops.json").exists());
    assert!(run.join("reports/summary.json").exists());

    let again = tmp.path().join("again");
    let o = evovit(&["train", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(run.join("checkpoint.bin")).unwrap(), fs::read(again.join("checkpoint.bin")).unwrap());
    let manifest2: Value = serde_json::from_str(&fs::read_to_string(again.join("manifest.json")).unwrap()).unwrap();
    assert_ne!(manifest["config_sha256"], manifest2["config_sha256"], "output_dir is part of the config");
}

#[test]
fn seed_override_changes_weights() {
    let tmp = TempDir::new().unwrap();
    let (cfg, run) = trained(&tmp);
    let other = tmp.path().join("other");
    let o = evovit(&[
        "train", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", other.to_str().unwrap(),
        "--override", "train.epochs=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(other.join("metrics.jsonl")).unwrap().lines().count(), 1);
    assert_ne!(fs::read(run.join("checkpoint.bin")).unwrap(), fs::read(other.join("checkpoint.bin")).unwrap());
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(&tmp.path().join("x"));
    cfg["evo"] = json!({ "keep_ration": 0.5 });
    let p = write_config(tmp.path(), "bad.json", &cfg);
    let o = evovit(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("keep_ration") && err.contains("evo"), "{err}");
    assert!(err.contains("line"), "{err}");

    let o = evovit(&["train", "--config", p.to_str().unwrap(), "--override", "evo.keep_ration=0.3"]);
    assert_eq!(o.status.code(), Some(2));

    let mut top = small_config(&tmp.path().join("x"));
    top["extra"] = json!(1);
    let p = write_config(tmp.path(), "top.json", &top);
    let o = evovit(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extra"));
}

#[test]
fn numeric_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(tmp.path(), "c.json", &small_config(&tmp.path().join("run")));
    let o = evovit(&["train", "--config", p.to_str().unwrap(), "--override", "train.learning_rate=1e300"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn deit_config(out: &Path) -> Value {
    json!({
        "encoder": {
            "image_side": 224, "patch_side": 16, "channels_in": 3, "embed_dim": 192,
            "heads": 3, "depth": 12, "num_classes": 1000
        },
        "evo": { "keep_ratio": 0.5, "start_layer": 5 },
        "dataset": { "synthetic": { "classes": 10, "samples": 8, "side": 224, "seed": 1, "channels": 3 } },
        "output_dir": out,
    })
}

#[test]
fn bench_flop_report() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(tmp.path(), "deit.json", &deit_config(&tmp.path().join("b")));
    let o = evovit(&["bench", "--config", p.to_str().unwrap(), "--flops-only"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["reduction_fraction"].as_f64().unwrap() >= 0.34);
    assert!(report["timing"].is_null());
    assert!(tmp.path().join("b/reports/bench.json").exists());

    let o = evovit(&["bench", "--config", p.to_str().unwrap(), "--flops-only", "--override", "evo.keep_ratio=1.0"]);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["reduction_fraction"].as_f64().unwrap(), 0.0);

    let o = evovit(&["bench", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_timing_small() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(tmp.path(), "c.json", &small_config(&tmp.path().join("b")));
    let o = evovit(&["bench", "--config", p.to_str().unwrap(), "--batch", "2", "--repeats", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["timing"]["evo"]["latencies"].as_array().unwrap().len(), 5);
    assert!(report["timing"]["median_speedup"].as_f64().unwrap() > 0.0);
    let o = evovit(&["bench", "--config", p.to_str().unwrap(), "--repeats", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn analyze_outputs() {
    let tmp = TempDir::new().unwrap();
    let (cfg, run) = trained(&tmp);
    let ckpt = run.join("checkpoint.bin");
    let o = evovit(&["analyze", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--cka"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&run.join("reports/cka.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let v: f64 = r[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(!run.join("reports/pcc.csv").exists());

    let o = evovit(&["analyze", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--pcc", "--strategies"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in csv_rows(&run.join("reports/pcc.csv")) {
        let v: f64 = r[1].parse().unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
    let strategies = csv_rows(&run.join("reports/strategies.csv"));
    let names: Vec<&str> = strategies.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["global-class-attention", "random", "last-class-attention", "attention-column-mean"]);
    for r in &strategies {
        let acc: f64 = r[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn analyze_rejects_mismatched_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let (_, run) = trained(&tmp);
    let mut cfg = small_config(&run);
    cfg["encoder"]["embed_dim"] = json!(8);
    let p = write_config(tmp.path(), "other.json", &cfg);
    let ckpt = run.join("checkpoint.bin");
    let o = evovit(&["analyze", "--config", p.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("dim 16") && err.contains("dim 8"), "{err}");

    fs::write(tmp.path().join("junk.bin"), b"NOPE").unwrap();
    let o = evovit(&["analyze", "--config", p.to_str().unwrap(), "--checkpoint", tmp.path().join("junk.bin").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

/// Header-parsed PGM: (width, height, pixels).
fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    assert_eq!(fields[0], "P5");
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    (w, h, bytes[pos + 1..].to_vec())
}

#[test]
fn visualize_masks() {
    let tmp = TempDir::new().unwrap();
    let (cfg, run) = trained(&tmp);
    let ckpt = run.join("checkpoint.bin");
    let o = evovit(&["visualize", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--count", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run.join("visualize");
    // depth 4, selection from layer 2: three masks per image.
    for layer in 2..=4 {
        let (w, h, px) = read_pgm(&dir.join(format!("eval000_layer{layer:02}_mask.pgm")));
        assert_eq!((w, h), (4, 4));
        assert_eq!(px.iter().filter(|&&v| v == 255).count(), 8);
        assert!(px.iter().all(|&v| v == 0 || v == 255));
        assert!(dir.join(format!("eval001_layer{layer:02}_overlay.ppm")).exists());
    }

    let all = tmp.path().join("all");
    let o = evovit(&[
        "visualize", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--count", "1", "--out", all.to_str().unwrap(), "--override", "evo.keep_ratio=1.0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, _, px) = read_pgm(&all.join("visualize/eval000_layer03_mask.pgm"));
    assert!(px.iter().all(|&v| v == 255));
}

#[test]
fn visualize_file_inputs_and_resolution_check() {
    let tmp = TempDir::new().unwrap();
    let (cfg, run) = trained(&tmp);
    let ckpt = run.join("checkpoint.bin");
    let good = tmp.path().join("good.pgm");
    let mut bytes = b"P5\n16 16\n255\n".to_vec();
    bytes.extend((0..256).map(|i| (i % 251) as u8));
    fs::write(&good, bytes).unwrap();
    let o = evovit(&["visualize", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--images", good.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("visualize/good_layer02_mask.pgm").exists());

    let small = tmp.path().join("small.pgm");
    let mut bytes = b"P5\n8 8\n255\n".to_vec();
    bytes.extend([128u8; 64]);
    fs::write(&small, bytes).unwrap();
    let o = evovit(&["visualize", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--images", small.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("8x8"));
}
