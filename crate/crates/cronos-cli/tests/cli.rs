//! End-to-end tests running the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cronos"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cronos-bin-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("bad stdout {text:?}: {e}"))
}

#[test]
fn gen_data_train_eval_round_trip() {
    let dir = tmp("e2e");
    let data = dir.join("planted.bin");
    let status = bin()
        .args(["gen-data", "--kind", "planted-relu", "--n", "80", "--d", "6"])
        .args(["--noise", "0", "--seed", "11", "--dest"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    let bytes = fs::read(&data).unwrap();
    assert_eq!(&bytes[..5], b"CRNS1");

    let out = dir.join("run");
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[data]\nsource = \"raw\"\npath = {:?}\nval_fraction = 0.2\n\n[solver]\nadmm_iters = 40\npatterns = 6\nbeta = 1e-3\n",
            data.display().to_string(),
        ),
    )
    .unwrap();
    let output = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--out"])
        .arg(&out)
        .env("CRONOS_RHO", "0.01")
        .args(["--task", "cronos"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let summary = stdout_json(&output);
    assert_eq!(summary["schema_version"], 1);
    assert!(out.join("metrics.jsonl").exists());
    assert!(out.join("summary.json").exists());
    assert!(out.join("checkpoint.json").exists());

    let eval_out = bin()
        .args(["eval", "--checkpoint"])
        .arg(out.join("checkpoint.json"))
        .args(["--seed", "3", "--source", "raw", "--data"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(eval_out.status.success(), "stderr: {}", String::from_utf8_lossy(&eval_out.stderr));
    let report = stdout_json(&eval_out);
    assert_eq!(report["n"], 80);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_rho_exits_2_and_writes_nothing() {
    let dir = tmp("badrho");
    let out = dir.join("never");
    let output = bin()
        .args(["train", "--rho", "-0.5", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("rho"));
    assert!(!out.exists(), "output directory must not be created");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_flag_exits_2() {
    let output = bin().args(["train", "--warp-speed", "9"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn flags_beat_environment() {
    let dir = tmp("prec");
    let run = |out: &Path, env_seed: Option<&str>, flag_seed: Option<&str>| {
        let mut cmd = bin();
        cmd.args(["train", "--out"]).arg(out);
        cmd.args(["--patterns", "4", "--admm-iters", "15"]);
        if let Some(s) = env_seed {
            cmd.env("CRONOS_SEED", s);
        }
        if let Some(s) = flag_seed {
            cmd.args(["--seed", s]);
        }
        let output = cmd.output().unwrap();
        assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
        fs::read(out.join("metrics.jsonl")).unwrap()
    };
    let flag_only = run(&dir.join("a"), None, Some("9"));
    let env_beaten = run(&dir.join("b"), Some("2"), Some("9"));
    let env_only = run(&dir.join("c"), Some("2"), None);
    assert_eq!(flag_only, env_beaten);
    assert_ne!(flag_only, env_only);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn blobs_run_reaches_95_percent_validation() {
    let dir = tmp("blobs");
    let out = dir.join("run");
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        concat!(
            "[data]\nkind = \"blobs\"\nn = 400\nd = 10\nnoise = 0.5\nval_fraction = 0.25\n\n",
            "[solver]\nadmm_iters = 60\npatterns = 8\nbeta = 1e-3\n",
        ),
    )
    .unwrap();
    let output = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let summary = stdout_json(&output);
    let acc = summary["peak_val_acc"].as_f64().unwrap();
    assert!(acc >= 0.95, "peak_val_acc {acc}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn determinism_across_processes() {
    let dir = tmp("proc-det");
    for name in ["a", "b"] {
        let status = bin()
            .args(["train", "--seed", "5", "--patterns", "4", "--admm-iters", "20", "--out"])
            .arg(dir.join(name))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["metrics.jsonl", "summary.json", "checkpoint.json"] {
        assert_eq!(
            fs::read(dir.join("a").join(file)).unwrap(),
            fs::read(dir.join("b").join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    fs::remove_dir_all(&dir).ok();
}
