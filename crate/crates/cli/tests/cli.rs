use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ldc_core::data::{synthetic, write_idx};
use tempfile::TempDir;

fn ldc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldc"))
        .args(args)
        .env_remove("LDC_DATA_ROOT")
        .output()
        .expect("run ldc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// IDX dataset of 16 features, 3 classes, 300 train and 150 test samples.
fn idx_fixture(dir: &Path) -> PathBuf {
    let data = synthetic(450, 16, 3, 30, 7);
    let root = dir.join("toy");
    fs::create_dir_all(&root).unwrap();
    for (name, range) in [("train", 0..300), ("test", 300..450)] {
        let pixels: Vec<u8> = range.clone().flat_map(|i| data.sample(i).to_vec()).collect();
        let ys: Vec<u8> = range.clone().map(|i| data.label(i) as u8).collect();
        write_idx(
            &root.join(format!("{name}-images")),
            &root.join(format!("{name}-labels")),
            4,
            4,
            &pixels,
            &ys,
        )
        .unwrap();
    }
    let manifest = root.join("manifest.toml");
    fs::write(
        &manifest,
        "name = \"toy\"\nformat = \"idx\"\n\n[train]\nimages = \"train-images\"\nlabels = \"train-labels\"\n\n\
         [test]\nimages = \"test-images\"\nlabels = \"test-labels\"\n",
    )
    .unwrap();
    manifest
}

/// Comma-separated dataset, label in the last column, with a held-out test split.
fn csv_fixture(dir: &Path) -> PathBuf {
    let data = synthetic(240, 6, 2, 25, 3);
    let mut text = String::new();
    for i in 0..data.len() {
        let row: Vec<String> = data.sample(i).iter().map(|v| format!("{:.1}", *v as f64 / 10.0)).collect();
        text += &format!("{},{}\n", row.join(","), data.label(i) + 1);
    }
    fs::write(dir.join("toy.csv"), text).unwrap();
    let manifest = dir.join("csv.toml");
    fs::write(
        &manifest,
        "name = \"toycsv\"\nformat = \"delimited\"\n\n[train]\ndata = \"toy.csv\"\n\n\
         [holdout]\ntest_fraction = 0.25\nseed = 1\n\n[schema]\nlabel_offset = 1\n",
    )
    .unwrap();
    manifest
}

fn train_small(manifest: &Path, out: &Path, seed: &str) -> Output {
    let args = [
        "train",
        "--dataset",
        manifest.to_str().unwrap(),
        "--dv",
        "2",
        "--df",
        "8",
        "--lr",
        "0.01",
        "--epochs",
        "4",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ];
    ldc(&args)
}

#[test]
fn help_exits_zero() {
    let o = ldc(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["train", "eval", "robust", "info"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = ldc(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_dataset_fails_before_writing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = ldc(&["train", "--dataset", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("LDC_DATA_ROOT"), "{}", stderr(&o));
    assert!(!out.exists());

    let missing = dir.path().join("absent/manifest.toml");
    let o = ldc(&["train", "--dataset", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn dataset_names_resolve_under_the_data_root() {
    let dir = TempDir::new().unwrap();
    idx_fixture(dir.path());
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_ldc"))
        .args(["train", "--dataset", "toy", "--model", "hdc-basic", "--dim", "256", "--out"])
        .arg(&out)
        .env("LDC_DATA_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("model.ldc").is_file());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let manifest = idx_fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("dataset = {:?}\nlearning_rate = 0.1\n", manifest.to_str().unwrap())).unwrap();
    let out = dir.path().join("run");
    let o = ldc(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = TempDir::new().unwrap();
    let manifest = idx_fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\nmodel = \"ldc\"\ndv = 2\ndf = 8\nlr = 0.01\nepochs = 3\nschedule = \"linear\"\nseed = 9\n",
            manifest.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = ldc(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let c = &summary["config"];
    assert_eq!(c["epochs"], 2);
    assert_eq!(c["seed"], 9);
    assert_eq!(c["schedule"], "linear");
    assert_eq!(c["df"], 8);
}

#[test]
fn train_eval_info_robust_round_trip() {
    let dir = TempDir::new().unwrap();
    let manifest = idx_fixture(dir.path());
    let out = dir.path().join("run");
    let o = train_small(&manifest, &out, "5");
    assert!(o.status.success(), "{}", stderr(&o));

    // one metrics line per epoch and split on stdout and in the run directory
    let printed = stdout(&o);
    assert_eq!(printed.lines().filter(|l| l.starts_with("epoch")).count(), 8);
    let records: Vec<serde_json::Value> = fs::read_to_string(out.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 8);
    for r in &records {
        for key in ["epoch", "split", "loss", "accuracy"] {
            assert!(r.get(key).is_some(), "{key} missing in {r}");
        }
    }

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let acc = summary["test_accuracy"].as_f64().unwrap();
    assert!(acc > 0.8, "accuracy {acc}");
    // 256*2 + (16+3)*8 bits
    assert_eq!(summary["size_bits"], 664);
    let model = out.join("model.ldc");
    assert_eq!(fs::metadata(&model).unwrap().len(), summary["file_bytes"].as_u64().unwrap());

    let o = ldc(&["eval", model.to_str().unwrap(), "--dataset", manifest.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains(&format!("test accuracy {acc:.4}")), "{}", stdout(&o));

    let o = ldc(&["eval", model.to_str().unwrap(), "--dataset", manifest.to_str().unwrap(), "--model", "hdc-basic"]);
    assert_eq!(o.status.code(), Some(1));

    let o = ldc(&["info", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let info = stdout(&o);
    assert!(info.contains("kind ldc"), "{info}");
    assert!(info.contains("664 bits"), "{info}");
    assert!(info.contains("(0.08 KB)"), "{info}");

    let rob = dir.path().join("rob");
    let o = ldc(&[
        "robust",
        model.to_str().unwrap(),
        "--dataset",
        manifest.to_str().unwrap(),
        "--runs",
        "3",
        "--out",
        rob.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(rob.join("robustness.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "rate\tmean\tstd\truns");
    assert_eq!(lines.len(), 6);
    let zero: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(zero[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(zero[1], format!("{acc:.4}"));
    assert_eq!(zero[2].parse::<f64>().unwrap(), 0.0);
    let rs: serde_json::Value = serde_json::from_str(&fs::read_to_string(rob.join("summary.json")).unwrap()).unwrap();
    assert_eq!(rs["report"]["clean_accuracy"].as_f64().unwrap(), acc);
    assert_eq!(rs["report"]["rates"][0]["mean"].as_f64().unwrap(), acc);
}

#[test]
fn training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let manifest = idx_fixture(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_small(&manifest, &a, "5").status.success());
    assert!(train_small(&manifest, &b, "5").status.success());
    assert_eq!(fs::read(a.join("model.ldc")).unwrap(), fs::read(b.join("model.ldc")).unwrap());
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());

    let c = dir.path().join("c");
    assert!(train_small(&manifest, &c, "6").status.success());
    assert_ne!(fs::read(a.join("model.ldc")).unwrap(), fs::read(c.join("model.ldc")).unwrap());
}

#[test]
fn hdc_models_train_on_delimited_data() {
    let dir = TempDir::new().unwrap();
    let manifest = csv_fixture(dir.path());
    for kind in ["hdc-basic", "hdc-retrain"] {
        let out = dir.path().join(kind);
        let o = ldc(&[
            "train",
            "--dataset",
            manifest.to_str().unwrap(),
            "--model",
            kind,
            "--dim",
            "512",
            "--retrain-epochs",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["model_kind"], kind);
        assert!(summary["test_accuracy"].as_f64().unwrap() > 0.8);
        // 256*512 + (6+2)*512
        assert_eq!(summary["size_bits"], 135168);
        let o = ldc(&["info", out.join("model.ldc").to_str().unwrap()]);
        assert!(stdout(&o).contains(&format!("kind {kind}")));
    }
}

#[test]
fn damaged_model_files_are_rejected() {
    let dir = TempDir::new().unwrap();
    let manifest = idx_fixture(dir.path());
    let out = dir.path().join("run");
    assert!(train_small(&manifest, &out, "5").status.success());
    let model = out.join("model.ldc");
    let mut bytes = fs::read(&model).unwrap();
    let last = bytes.len() - 5;
    bytes[last] ^= 0x10;
    let bad = dir.path().join("bad.ldc");
    fs::write(&bad, &bytes).unwrap();
    for args in [
        vec!["info", bad.to_str().unwrap()],
        vec!["eval", bad.to_str().unwrap(), "--dataset", manifest.to_str().unwrap()],
    ] {
        let o = ldc(&args);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
    }
    fs::write(&bad, &bytes[..40]).unwrap();
    let o = ldc(&["info", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn robust_rejects_bad_rates() {
    let dir = TempDir::new().unwrap();
    let manifest = idx_fixture(dir.path());
    let out = dir.path().join("run");
    assert!(train_small(&manifest, &out, "5").status.success());
    let model = out.join("model.ldc");
    for rates in ["0.1,0.01", "1.5", "x"] {
        let o = ldc(&["robust", model.to_str().unwrap(), "--dataset", manifest.to_str().unwrap(), "--rates", rates]);
        assert_eq!(o.status.code(), Some(1), "rates {rates}");
    }
}
