//! End-to-end checks of the command-line surface, run against the compiled
//! binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ndsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndsnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        r#"
[network]
layers = [
  { kind = "linear", n_in = 16, n_out = 12 },
  { kind = "linear", n_in = 12, n_out = 4 },
]
[data]
source = "synthetic"
classes = 4
features = 16
samples_per_class = 20
batch_size = 16
[run]
epochs = 2
seed = 3
"#,
    )
    .unwrap();
    path
}

#[test]
fn estimate_memory_matches_closed_form() {
    let out = ndsnn(&[
        "estimate-memory",
        "--n", "1000000",
        "--sparsity", "0.95",
        "--t", "5",
        "--bw", "32",
        "--bidx", "32",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), "11200000 bits");
}

#[test]
fn estimate_cost_reports_density_scaled_rate() {
    let out = ndsnn(&["estimate-cost", "--r-sparse", "0.2", "--sparsity", "0.9", "--r-dense", "0.2"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let cost: f64 = stdout.trim().strip_prefix("relative_cost=").unwrap().parse().unwrap();
    assert!((cost - 0.1).abs() < 1e-12, "{stdout}");
}

#[test]
fn gradcheck_passes_below_tolerance() {
    let out = ndsnn(&["gradcheck", "--cases", "5", "--seed", "1"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("max_rel_err="), "{stdout}");
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn train_with_missing_config_fails_cleanly() {
    let out = ndsnn(&["train", "--config", "missing.cfg"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "{stderr}");
    assert!(stderr.contains("missing.cfg"), "{stderr}");
}

#[test]
fn invalid_thread_cap_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_ndsnn"))
        .env("NDSNN_THREADS", "zero")
        .args(["estimate-cost", "--r-sparse", "1", "--sparsity", "0", "--r-dense", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("NDSNN_THREADS"), "{stderr}");
}

#[test]
fn train_writes_outputs_and_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_a = dir.path().join("a");
    let run = ndsnn(&[
        "train",
        "--config", config.to_str().unwrap(),
        "--out", out_a.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["metrics.csv", "summary.json", "config.toml", "manifest.json", "layer_0.csr"] {
        assert!(out_a.join(f).exists(), "missing {f}");
    }
    let metrics_a = fs::read(out_a.join("metrics.csv")).unwrap();
    assert!(String::from_utf8_lossy(&metrics_a)
        .starts_with("epoch,iter,loss,train_acc,val_acc,sparsity,spike_rate,rel_cost"));

    // Re-training from the echoed resolved config reproduces the run.
    let out_b = dir.path().join("b");
    let rerun = ndsnn(&[
        "train",
        "--config", out_a.join("config.toml").to_str().unwrap(),
        "--out", out_b.to_str().unwrap(),
    ]);
    assert!(rerun.status.success(), "{}", String::from_utf8_lossy(&rerun.stderr));
    let metrics_b = fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b);
}

#[test]
fn eval_reproduces_final_checkpoint_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("run");
    let run = ndsnn(&[
        "train",
        "--config", config.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let eval = ndsnn(&[
        "eval",
        "--config", config.to_str().unwrap(),
        "--checkpoint", out_dir.to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let stdout = String::from_utf8(eval.stdout).unwrap();
    let acc: f64 = stdout.trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
