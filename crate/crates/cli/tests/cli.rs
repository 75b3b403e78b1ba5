use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_basen"));
    c.env_remove("BASEN_RUN_ROOT");
    c
}

fn tiny_config(root: &Path) -> PathBuf {
    let cfg = json!({
        "synth": {"n_examples": 20, "q_channels": 8, "informative_channels": [1, 5], "seg_len_s": 1.0},
        "preprocess": {"seg_len_s": 1.0},
        "model": {
            "embed_dim": 8, "eeg_tcn_layers": 2, "eeg_hidden": 8, "cmca_layers": 1, "heads": 2,
            "sep_bottleneck": 8, "sep_hidden": 8, "sep_blocks": 2, "sep_repeats": 1
        },
        "train": {
            "schedule": {"total_epochs": 1, "batch_size": 4},
            "temperature": {"total_epochs": 1},
            "gcs": {"epochs": 1},
            "resgs": {"stage1_epochs": 1, "stage2_epochs": 1},
            "convrs": {"gammas": [0.0, 0.1], "scratch_epochs": 1, "stage1_epochs": 1, "stage2_epochs": 1}
        },
        "paths": {
            "data_dir": root.join("raw"),
            "preprocessed_dir": root.join("mua"),
            "run_dir": root.join("runs")
        }
    });
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(cfg: &Path, args: &[&str]) -> Output {
    let out = bin().arg("--config").arg(cfg).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn synth_preprocess_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = tiny_config(root);
    assert_eq!(stdout_json(&run(&cfg, &["synth"]))["examples"], 20);
    assert!(root.join("raw/ex00000/eeg.f32").exists());
    assert_eq!(stdout_json(&run(&cfg, &["preprocess"]))["examples"], 20);
    assert!(root.join("mua/ex00000_s00/meta.json").exists());

    let train = stdout_json(&run(&cfg, &["train", "basen"]));
    let run_dir = root.join("runs/basen");
    for f in ["config.json", "metrics.jsonl", "summary.json", "checkpoints/basen.ckpt"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let ckpt = train["checkpoint"].as_str().unwrap().to_string();
    let out_path = root.join("eval.json");
    let eval = stdout_json(&run(&cfg, &["eval", "--ckpt", &ckpt, "--out", out_path.to_str().unwrap()]));
    assert_eq!(eval["examples"].as_array().unwrap().len(), 20);
    let saved: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(saved, eval);

    let report = stdout_json(&run(&cfg, &["report", "--run", run_dir.to_str().unwrap()]));
    assert!(report["channel_maps"].as_array().unwrap().is_empty());
    for f in ["eval.json", "metrics.json", "si_sdri_quartiles.svg"] {
        assert!(run_dir.join("report").join(f).exists(), "missing report/{f}");
    }

    let snapshot: Value = serde_json::from_slice(&std::fs::read(run_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["synth"]["n_examples"], 20);
    assert_eq!(snapshot["train"]["seed"], 0);
}

#[test]
fn convrs_run_selects_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run(&cfg, &["synth"]);
    run(&cfg, &["preprocess"]);
    run(&cfg, &["train", "convrs"]);
    let run_dir = dir.path().join("runs/convrs");
    assert!(run_dir.join("subsets/convrs_g0.100.json").exists());
    let sel = stdout_json(&run(&cfg, &["select", "--run", run_dir.to_str().unwrap(), "--gamma", "0.1"]));
    assert_eq!(sel["subset"]["gamma_or_K"], 0.1);
    assert!(run_dir.join("selection.json").exists());
    run(&cfg, &["report", "--run", run_dir.to_str().unwrap()]);
    assert!(run_dir.join("report/channel_map_g0.100.json").exists());
    assert!(run_dir.join("report/channel_map_selection.svg").exists());
}

#[test]
fn unsorted_gammas_fail_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["--set", "train.convrs.gammas=[0.0,0.3,0.1]", "--set", "train.nope=1", "train", "convrs"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    let err: Value = serde_json::from_str(&stderr).unwrap();
    assert_eq!(err["error"], "config");
    let keys: Vec<String> = serde_json::from_value(err["keys"].clone()).unwrap();
    assert!(keys.iter().any(|k| k.starts_with("train.convrs.gammas")), "{keys:?}");
    assert!(keys.iter().any(|k| k.starts_with("train.nope")), "{keys:?}");
}

#[test]
fn same_seed_gives_identical_subset_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run(&cfg, &["--seed", "7", "synth"]);
    run(&cfg, &["preprocess"]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        run(&cfg, &["--seed", "7", "--run-dir", d.to_str().unwrap(), "train", "gcs"]);
    }
    let read = |d: &Path| std::fs::read(d.join("gcs/subset.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let snap: Value = serde_json::from_slice(&std::fs::read(a.join("gcs/config.json")).unwrap()).unwrap();
    assert_eq!(snap["train"]["seed"], 7);
}

#[test]
fn missing_dataset_is_a_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = bin().arg("--config").arg(&cfg).args(["train", "basen"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn help_lists_every_key_with_defaults() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["synth.q_channels", "train.convrs.gammas", "train.loss.k1", "paths.run_dir", "preprocess.a_gamma"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}

#[test]
fn run_root_env_sets_default_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("BASEN_RUN_ROOT", dir.path())
        .args(["--set", "synth.n_examples=2", "--set", "synth.seg_len_s=1.0", "--set", "preprocess.seg_len_s=1.0", "synth"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/raw/ex00001/meta.json").exists());
}
