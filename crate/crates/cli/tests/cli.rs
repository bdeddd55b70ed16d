//! End-to-end tests of the `brcgan` binary: artifact layout, determinism,
//! overrides, exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const BIN: &str = env!("CARGO_BIN_EXE_brcgan");

const TINY_CONFIG: &str = r#"
[experiment]
dataset = "ring5"
method = "iga"
seeds = [0, 1]
total_iters = 6
eval_every = 3

[model]
latent_dim = 4
hidden_width = 8
hidden_layers = 2

[train]
batch_size = 16
inner_steps = 2

[metrics]
eval_samples = 32
"#;

fn brcgan(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BRCGAN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_sorted_artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_str().unwrap().to_string(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn run_writes_the_full_artifact_set_with_pinned_headers() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let out_dir = tmp.path().join("out");
    let out = brcgan(&["run", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let names: Vec<String> = read_sorted_artifacts(&out_dir)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let expected = [
        "checkpoint_ring5-iga-vanilla_nonsat-s0.disc.txt",
        "checkpoint_ring5-iga-vanilla_nonsat-s0.gen.txt",
        "checkpoint_ring5-iga-vanilla_nonsat-s1.disc.txt",
        "checkpoint_ring5-iga-vanilla_nonsat-s1.gen.txt",
        "config.effective.toml",
        "metrics_ring5-iga-vanilla_nonsat-s0.csv",
        "metrics_ring5-iga-vanilla_nonsat-s1.csv",
        "summary.csv",
        "trajectory_ring5-iga-vanilla_nonsat-s0.csv",
        "trajectory_ring5-iga-vanilla_nonsat-s1.csv",
    ];
    assert_eq!(names, expected);

    let traj =
        fs::read_to_string(out_dir.join("trajectory_ring5-iga-vanilla_nonsat-s0.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,F_value,f_value,grad_norm_G,grad_norm_D,brc_scalar,wall_ms"
    );
    assert_eq!(lines.clone().count(), 6);
    for line in lines {
        assert!(line.ends_with(",0.000000000e0"), "deterministic wall_ms: {line}");
    }

    let metrics =
        fs::read_to_string(out_dir.join("metrics_ring5-iga-vanilla_nonsat-s0.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,iteration,fid,js_bits,modes,n_samples,clip_fraction"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("ring5-iga-vanilla_nonsat-s0,3,"));
    assert!(rows[1].starts_with("ring5-iga-vanilla_nonsat-s0,6,"));

    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary
        .starts_with("group,n_runs,fid_mean,fid_std,js_mean,js_std,modes_mean,modes_std\n"));
    assert!(summary.contains("ring5-iga-vanilla_nonsat,2,"));

    let echo = fs::read_to_string(out_dir.join("config.effective.toml")).unwrap();
    assert!(echo.contains("dataset = \"ring5\""));
    assert!(echo.contains("batch_size = 16"));
    assert!(echo.contains("lr_g ="), "defaults are echoed too");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    assert!(brcgan(&["run", &cfg, "--out-dir", dir_a.to_str().unwrap()])
        .status
        .success());
    assert!(brcgan(&["run", &cfg, "--out-dir", dir_b.to_str().unwrap()])
        .status
        .success());
    let a = read_sorted_artifacts(&dir_a);
    let b = read_sorted_artifacts(&dir_b);
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(b.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between reruns");
    }
}

#[test]
fn seed_and_iter_flags_override_the_config() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let out_dir = tmp.path().join("out");
    let out = brcgan(&[
        "run",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--seed",
        "5",
        "--iters",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj =
        fs::read_to_string(out_dir.join("trajectory_ring5-iga-vanilla_nonsat-s5.csv")).unwrap();
    assert_eq!(traj.lines().count(), 5, "header + 4 iterations");
    assert!(!out_dir.join("trajectory_ring5-iga-vanilla_nonsat-s0.csv").exists());
    let metrics =
        fs::read_to_string(out_dir.join("metrics_ring5-iga-vanilla_nonsat-s5.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "eval at 3 and the final-iteration eval at 4");
}

#[test]
fn the_env_var_sets_the_default_out_dir() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let env_dir = tmp.path().join("from_env");
    let out = Command::new(BIN)
        .args(["run", &cfg, "--seed", "0", "--iters", "3"])
        .env("BRCGAN_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_dir.join("summary.csv").exists());
}

#[test]
fn missing_config_exits_2_and_names_the_file() {
    let out = brcgan(&["run", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn invalid_config_exits_2_with_the_offending_value() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[experiment]\nmethod = \"sgd\"\n");
    let out = brcgan(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sgd") && err.contains("config.toml"), "{err}");
}

#[test]
fn unknown_subcommands_exit_2() {
    let out = brcgan(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn summarize_rebuilds_the_summary_from_metrics_files() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let out_dir = tmp.path().join("out");
    assert!(brcgan(&["run", &cfg, "--out-dir", out_dir.to_str().unwrap()])
        .status
        .success());
    let original = fs::read(out_dir.join("summary.csv")).unwrap();
    fs::remove_file(out_dir.join("summary.csv")).unwrap();
    let out = brcgan(&["summarize", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(out_dir.join("summary.csv")).unwrap(), original);
}

#[test]
fn summarize_without_metrics_files_exits_2() {
    let tmp = tempdir().unwrap();
    let out = brcgan(&["summarize", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics_"));
}

#[test]
fn eval_scores_a_saved_generator_checkpoint() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let out_dir = tmp.path().join("out");
    assert!(brcgan(&[
        "run",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--seed",
        "0",
        "--iters",
        "3"
    ])
    .status
    .success());
    let ckpt = out_dir.join("checkpoint_ring5-iga-vanilla_nonsat-s0.gen.txt");
    let out = brcgan(&["eval", ckpt.to_str().unwrap(), "ring5", "--samples", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("run_id,iteration,fid,js_bits,modes,n_samples,clip_fraction"));
    assert!(stdout.contains("eval-ring5,0,"));

    // Scoring a 2-D generator against the 3-D dataset is a usage error.
    let out = brcgan(&["eval", ckpt.to_str().unwrap(), "cube27", "--samples", "32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimensional"));
}

#[test]
fn an_aborted_seed_is_marked_and_the_rest_still_run() {
    // The unbounded WGAN objective with an absurd learning rate drives the
    // samples so large that the evaluation's covariance overflows; the run
    // must be marked FAILED while later seeds proceed normally.
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[experiment]
dataset = "ring5"
method = "iga"
flavor = "wgan"
seeds = [0, 1]
total_iters = 100
eval_every = 50

[model]
latent_dim = 4
hidden_width = 8
hidden_layers = 2

[train]
batch_size = 16
inner_steps = 2
lr_g = 1e8
lr_d = 1e8

[metrics]
eval_samples = 32
"#,
    );
    let out_dir = tmp.path().join("out");
    let out = brcgan(&["run", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let marker = out_dir.join("FAILED_ring5-iga-wgan-s0.txt");
    assert!(marker.exists(), "seed 0 should abort at evaluation");
    assert!(fs::read_to_string(&marker).unwrap().contains("iteration"));
    // The surviving seed produced its artifacts and is the only summary entry.
    assert!(out_dir.join("trajectory_ring5-iga-wgan-s1.csv").exists());
    assert!(out_dir.join("checkpoint_ring5-iga-wgan-s0.gen.txt").exists());
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("ring5-iga-wgan,1,"), "{summary}");
    // Rebuilding the summary honors the marker the same way.
    let original = fs::read(out_dir.join("summary.csv")).unwrap();
    fs::remove_file(out_dir.join("summary.csv")).unwrap();
    assert!(brcgan(&["summarize", out_dir.to_str().unwrap()])
        .status
        .success());
    assert_eq!(fs::read(out_dir.join("summary.csv")).unwrap(), original);
}

#[test]
fn bench_writes_one_row_per_hypergradient_method() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let out_dir = tmp.path().join("bench");
    let out = brcgan(&[
        "bench",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--steps",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "method,median_step_ms,mean_step_ms,peak_workspace_bytes,steps_timed"
    );
    assert_eq!(lines.len(), 4);
    let methods: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, ["iga", "cg", "neumann"]);
    let peak = |line: &str| -> usize { line.split(',').nth(3).unwrap().parse().unwrap() };
    assert!(peak(lines[1]) < peak(lines[2]), "iga uses less workspace than cg");
    assert!(peak(lines[1]) < peak(lines[3]), "iga uses less workspace than neumann");
}
