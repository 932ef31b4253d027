//! End-to-end runs of the `retrac` binary on tiny configurations.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TRAIN_CONFIG: &str = r#"
[data]
majority_count = 24
minority_count = 4
dim = 4
generator = "gaussian-mixture"
seed = 7

[model]
input_dim = 4
hidden_dims = [16]
time_embed_dim = 4

[schedule]
num_timesteps = 1000
beta_start = 1e-4
beta_end = 0.02

[train]
epochs = 25
batch_size = 7
lr = 0.02
seed = 3
checkpoint_every = 50
"#;

fn retrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retrac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(cmd: &str, config: &Path, out: &Path) {
    let o = retrac(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(
        o.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let stderr = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    stderr.trim_end().to_string()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn training_writes_checkpoints_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_CONFIG);
    let out = dir.path().join("run");
    run_ok("train", &cfg, &out);

    // 28 samples in batches of 7 gives 4 steps per epoch, 100 steps total.
    let mut ckpts: Vec<String> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    ckpts.sort();
    assert_eq!(ckpts, ["ckpt_00000000.bin", "ckpt_00000050.bin", "ckpt_00000100.bin"]);
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,sample_id,timestep,noise_seed,lr\n"));
    assert_eq!(log.lines().count(), 1 + 100 * 7);
    assert!(!log.contains('\r'));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["checkpoints"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["schedule_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);

    let again = dir.path().join("run2");
    run_ok("train", &cfg, &again);
    for name in &ckpts {
        let a = fs::read(out.join("checkpoints").join(name)).unwrap();
        let b = fs::read(again.join("checkpoints").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn corrupt_checkpoint_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_CONFIG);
    let out = dir.path().join("run");
    run_ok("train", &cfg, &out);

    let ckpt = out.join("checkpoints/ckpt_00000050.bin");
    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    fs::write(&ckpt, bytes).unwrap();

    let att = dir.path().join("attr.toml");
    write(
        &att,
        r#"
[attribute]
run = "run"
methods = [{ kind = "tracin" }]
n_t = 5
m = 1
noise_seed = 1
checkpoints = 2
tests = { majority_count = 1, minority_count = 1, seed = 5 }
"#,
    );
    let o = retrac(&["attribute", "--config", att.to_str().unwrap(), "--out", dir.path().join("a").to_str().unwrap()]);
    let line = error_line(&o);
    assert!(line.starts_with("error[integrity]:"), "{line}");
    assert!(line.contains("ckpt_00000050.bin") && line.contains("does not match"), "{line}");
}

#[test]
fn edited_manifest_digest_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_CONFIG);
    let out = dir.path().join("run");
    run_ok("train", &cfg, &out);
    let path = out.join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    manifest["train_log"]["sha256"] = serde_json::Value::String("0".repeat(64));
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let ana = dir.path().join("ana.toml");
    write(&ana, "[analyze]\nkind = \"norm-profile\"\nrun = \"run\"\n");
    let o = retrac(&["analyze", "--config", ana.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    let line = error_line(&o);
    assert!(line.starts_with("error[integrity]:"), "{line}");
    assert!(line.contains(&"0".repeat(64)), "{line}");
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(&cfg, &TRAIN_CONFIG.replace("lr = 0.02", "lr = 0.02\nmomentum = 0.9"));
    let o = retrac(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    let line = error_line(&o);
    assert!(line.starts_with("error[format]:") && line.contains("momentum"), "{line}");

    write(&cfg, &TRAIN_CONFIG.replace("seed = 3\n", ""));
    let o = retrac(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    let line = error_line(&o);
    assert!(line.contains("seed"), "{line}");

    write(&cfg, &TRAIN_CONFIG.replace("dim = 4", "dim = 1").replace("input_dim = 4", "input_dim = 1"));
    let o = retrac(&["make-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    let line = error_line(&o);
    assert!(line.starts_with("error[argument]:"), "{line}");

    let o = retrac(&["train", "--config", dir.path().join("missing.toml").to_str().unwrap(), "--out", "x"]);
    let line = error_line(&o);
    assert!(line.starts_with("error[io]:"), "{line}");
}

#[test]
fn make_data_is_deterministic_and_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("data.toml");
    write(
        &cfg,
        "[data]\nmajority_count = 500\nminority_count = 20\ndim = 16\ngenerator = \"gaussian-mixture\"\nseed = 7\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("make-data", &cfg, &a);
    run_ok("make-data", &cfg, &b);
    for f in ["data.csv", "labels.csv", "data_manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 520);
    assert_eq!(labels.lines().filter(|l| l.ends_with(",1")).count(), 20);
}

#[test]
fn attribution_reports_share_seeds_and_analyses_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_CONFIG);
    run_ok("train", &cfg, &dir.path().join("run"));

    let att = dir.path().join("attr.toml");
    write(
        &att,
        r#"
[attribute]
run = "run"
methods = [{ kind = "tracin" }, { kind = "retrac" }]
n_t = 10
m = 2
noise_seed = 11
checkpoints = 2
tests = { majority_count = 2, minority_count = 2, seed = 5 }
precision_k = [2]
outlier_k = [4, 8]
"#,
    );
    let attr_out = dir.path().join("attr");
    run_ok("attribute", &att, &attr_out);
    run_ok("self-influence", &att, &dir.path().join("self"));
    let report = |name: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(attr_out.join(format!("{name}_report.json"))).unwrap()).unwrap()
    };
    let (t, r) = (report("tracin"), report("retrac"));
    for key in ["noise_seed", "n_t", "m", "timesteps", "checkpoint_steps", "tests"] {
        assert_eq!(t[key], r[key], "{key}");
    }
    let scores = fs::read_to_string(attr_out.join("retrac_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 4 * 28);

    let uniq = dir.path().join("uniq.toml");
    write(
        &uniq,
        "[analyze]\nkind = \"uniqueness\"\nreports = [\"attr/tracin_scores.csv\", \"attr/tracin_scores.csv\"]\nk = 3\n",
    );
    // Rows are reduced to a single test so the two identical lists give 1/n.
    let single: String = scores
        .lines()
        .filter(|l| l.starts_with("test_id") || l.starts_with("0,"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(attr_out.join("tracin_scores.csv"), single).unwrap();
    let uniq_out = dir.path().join("u");
    run_ok("analyze", &uniq, &uniq_out);
    let csv = fs::read_to_string(uniq_out.join("uniqueness.csv")).unwrap();
    let value: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(value, 0.5);

    let corr = dir.path().join("corr.toml");
    write(&corr, "[analyze]\nkind = \"correlation\"\nrun = \"run\"\nstride = 50\n");
    let corr_out = dir.path().join("c");
    run_ok("analyze", &corr, &corr_out);
    let csv = fs::read_to_string(corr_out.join("correlation.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "rho,p,slope");
}

#[test]
fn empty_test_set_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_CONFIG);
    run_ok("train", &cfg, &dir.path().join("run"));
    let att = dir.path().join("attr.toml");
    write(
        &att,
        "[attribute]\nrun = \"run\"\nmethods = [{ kind = \"tracin\" }]\nnoise_seed = 1\ntests = { majority_count = 0, minority_count = 0, seed = 5 }\n",
    );
    let o = retrac(&["attribute", "--config", att.to_str().unwrap(), "--out", dir.path().join("a").to_str().unwrap()]);
    let line = error_line(&o);
    assert!(line.starts_with("error[argument]:"), "{line}");
}
