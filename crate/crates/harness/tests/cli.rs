use std::path::Path;
use std::process::{Command, Output};

use jacspec_harness::manifest::{checkpoint_path, manifest_path};
use jacspec_harness::{run_sweep, ExperimentConfig, RunOptions, SweepPlan, HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_jacspec");

const DEPTH: &str = "experiment_id = 'cli-depth'\nkind = 'depth_sweep'\nn = 32\ndepths = [2, 6, 10]\nseeds = 3\nsigma_w2 = [1.5, 2.0]\n";

fn jacspec(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("JACSPEC_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(jacspec(&["--help"], d).status.code(), Some(0));
    assert_eq!(jacspec(&["--version"], d).status.code(), Some(0));
    assert_eq!(jacspec(&["no-such-command"], d).status.code(), Some(1));
    assert_eq!(jacspec(&["sweep"], d).status.code(), Some(1), "missing --config");
    assert_eq!(jacspec(&["sweep", "--config", "missing.toml"], d).status.code(), Some(1));

    let bad = write(d, "bad.toml", "experiment_id = 'x'\nkind = 'depth_sweep'\nn = 0\ndepths = [3]\n");
    assert_eq!(jacspec(&["sweep", "--config", &bad], d).status.code(), Some(1));
    let unknown = write(d, "unknown.toml", &format!("{DEPTH}colour = 'red'\n"));
    assert_eq!(jacspec(&["sweep", "--config", &unknown], d).status.code(), Some(1));
    let cfg = write(d, "depth.toml", DEPTH);
    assert_eq!(jacspec(&["prune-sweep", "--config", &cfg], d).status.code(), Some(1), "kind mismatch");
    assert_eq!(jacspec(&["scale-factor", "--method", "random", "--s", "1.5"], d).status.code(), Some(1));
}

#[test]
fn scale_factor_random() {
    let dir = tempfile::tempdir().unwrap();
    let out = jacspec(&["scale-factor", "--method", "random", "--s", "0.75"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "analytic 2"), "{text}");
}

#[test]
fn scale_factor_top_r_reports_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = jacspec(&["scale-factor", "--method", "magnitude_top_r", "--r", "1000", "--n", "64"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("threshold "), "{text}");
    assert!(text.lines().any(|l| l == "kept 1000"), "{text}");
}

#[test]
fn fit_recovers_synthetic_slope() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = format!("{HEADER}\n");
    for l in (20..=60).step_by(5) {
        csv += &format!("syn,depth_sweep,0,64,{l},4,none,0,none,1,0,0,{},true,0\n", 0.6931 * l as f64 + 0.1);
    }
    let path = write(dir.path(), "syn.csv", &csv);
    let out = jacspec(&["fit", &path], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("slope=0.6931"), "{text}");
    assert!(text.contains("verdict=exploding"), "{text}");
}

#[test]
fn sweep_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "depth.toml", DEPTH);
    let out = jacspec(&["sweep", "--config", &cfg, "--seed", "9", "--quiet", "--out", "a.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("a.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    assert_eq!(lines.count(), 2 * 3 * 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest_path(&d.join("a.csv"))).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 9);
    assert_eq!(manifest["row_count"], 18);
    assert!(!checkpoint_path(&d.join("a.csv")).exists());
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "depth.toml", DEPTH);
    jacspec(&["sweep", "--config", &cfg, "--quiet", "--threads", "1", "--out", "one.csv"], d);
    jacspec(&["sweep", "--config", &cfg, "--quiet", "--threads", "8", "--out", "eight.csv"], d);
    let one = std::fs::read(d.join("one.csv")).unwrap();
    assert!(!one.is_empty());
    assert_eq!(one, std::fs::read(d.join("eight.csv")).unwrap());
}

#[test]
fn threads_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "depth.toml", DEPTH);
    let status = Command::new(BIN)
        .args(["sweep", "--config", &cfg, "--quiet", "--threads", "1", "--out", "e.csv"])
        .current_dir(d)
        .env("JACSPEC_THREADS", "3")
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest_path(&d.join("e.csv"))).unwrap()).unwrap();
    assert_eq!(manifest["threads"], 3);

    let status = Command::new(BIN)
        .args(["sweep", "--config", &cfg, "--quiet", "--out", "f.csv"])
        .current_dir(d)
        .env("JACSPEC_THREADS", "many")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn resume_from_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg_path = write(d, "depth.toml", DEPTH);
    jacspec(&["sweep", "--config", &cfg_path, "--seed", "4", "--quiet", "--out", "fresh.csv"], d);

    // a run that stopped after two tasks, with a torn final line
    let resumed = d.join("resumed.csv");
    let ckpt = checkpoint_path(&resumed);
    let plan = SweepPlan::from_config(&ExperimentConfig::from_toml(DEPTH).unwrap()).unwrap();
    run_sweep(&plan, &RunOptions { master_seed: 4, threads: 1, timing: false }, Some(&ckpt)).unwrap();
    let full = std::fs::read_to_string(&ckpt).unwrap();
    let mut partial: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
    partial += &full.lines().nth(2).unwrap()[..20];
    std::fs::write(&ckpt, partial).unwrap();

    let out = jacspec(&["sweep", "--config", &cfg_path, "--seed", "4", "--quiet", "--resume", "--out", "resumed.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(d.join("fresh.csv")).unwrap(), std::fs::read(&resumed).unwrap());
    assert!(!ckpt.exists());
}

#[test]
fn condition_and_approx_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cond = write(
        d,
        "cond.toml",
        "experiment_id = 'c'\nkind = 'condition_check'\nn = 32\nmc_samples = 100\n\
         [[pruning]]\nmethod = 'random'\ns = 0.5\nscaling = 'analytic'\n",
    );
    let out = jacspec(&["check-conditions", "--config", &cond, "--quiet", "--out", "c.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("experiment_id,method,sparsity,scaling_mode,statistic,value,stderr"));

    let approx = write(
        d,
        "approx.toml",
        "experiment_id = 'a'\nkind = 'approx_verify'\nn = 24\ndepths = [6]\nlayer = 3\nseeds = 5\n\
         stats_n = 12\nstats_seeds = 10\nchi2_tables = 4\nchi2_samples = 10\n",
    );
    let out = jacspec(&["verify-approx", "--config", &approx, "--quiet", "--out", "a.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("pooled_fraction "));
    assert!(manifest_path(&d.join("a.csv")).exists());
}
