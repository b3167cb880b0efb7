//! Round-trip test for the command-line binary: train, eval, sweep, genbench
//! on a miniature configuration, plus a byte-level determinism check.

use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_deferlab"))
        .args(args)
        .output()
        .expect("failed to launch deferlab");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, policy: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
[run]
seed = 5
{policy}

[task]
class_count = 4
feature_dim = 4
episode_length = 12
profile = {{ kind = "difficulty_linear", easy = 0.95, hard = 0.35 }}

[fatigue]
preset = "rapid_fatigue"

[train]
iterations = 3
episodes_per_iter = 8
minibatch_episodes = 4
budget = {{ lower = 0.5, upper = 0.7 }}

[eval]
seeds = [101]
episodes_per_seed = 2
coverage_targets = [0.3, 0.7]
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out = |p: &Path| p.to_str().unwrap().to_owned();

    // Train writes a resolved config, a checkpoint and the training log.
    let (ok, stdout, stderr) = run(&["--config", cfg, "--out", &out(&out_a), "--workers", "1", "train"]);
    assert!(ok, "train failed: {stderr}");
    assert!(stdout.contains("trained 3 iterations"), "unexpected stdout: {stdout}");
    for file in ["resolved_config.toml", "checkpoint_final.json", "training_log.csv"] {
        assert!(out_a.join(file).exists(), "missing {file}");
    }

    // Identical config and seed reproduce the checkpoint byte for byte.
    let out_b = dir.path().join("b");
    let (ok, _, stderr) = run(&["--config", cfg, "--out", &out(&out_b), "--workers", "1", "train"]);
    assert!(ok, "second train failed: {stderr}");
    assert_eq!(
        std::fs::read(out_a.join("checkpoint_final.json")).unwrap(),
        std::fs::read(out_b.join("checkpoint_final.json")).unwrap(),
        "reruns must be deterministic"
    );

    // Eval the trained policy across the regime suite.
    let ckpt = out(&out_a.join("checkpoint_final.json"));
    let policy = format!("policy = {{ name = \"learned\", checkpoint = {ckpt:?} }}");
    let eval_cfg = write_config(dir.path(), &policy);
    let eval_cfg = eval_cfg.to_str().unwrap();
    let out_c = dir.path().join("c");
    let (ok, _, stderr) = run(&["--config", eval_cfg, "--out", &out(&out_c), "--workers", "1", "eval"]);
    assert!(ok, "eval failed: {stderr}");
    assert!(out_c.join("eval.csv").exists());
    assert!(out_c.join("auacc.csv").exists());
    let curve = std::fs::read_to_string(out_c.join("curve_rapid_fatigue.csv")).unwrap();
    assert!(curve.starts_with("method,regime,coverage,accuracy,std_error"), "bad header: {curve}");

    // Sweep a parametric family over the coverage targets.
    let sweep_cfg =
        write_config(dir.path(), "policy = { name = \"random\", target_coverage = 0.5 }");
    let sweep_cfg = sweep_cfg.to_str().unwrap();
    let out_d = dir.path().join("d");
    let (ok, stdout, stderr) = run(&["--config", sweep_cfg, "--out", &out_d.to_str().unwrap(), "--workers", "1", "sweep"]);
    assert!(ok, "sweep failed: {stderr}");
    assert!(stdout.contains("auacc"), "unexpected stdout: {stdout}");
    assert!(out_d.join("curve_random.csv").exists());

    // Genbench exports an instance stream plus per-episode expert draws.
    let out_e = dir.path().join("e");
    let (ok, _, stderr) = run(&["--config", cfg, "--out", &out(&out_e), "genbench", "--episodes", "2"]);
    assert!(ok, "genbench failed: {stderr}");
    let instances = std::fs::read_to_string(out_e.join("instances.csv")).unwrap();
    assert_eq!(instances.lines().count(), 1 + 24, "2 episodes x 12 instances plus header");
    let params = std::fs::read_to_string(out_e.join("fatigue_params.csv")).unwrap();
    assert_eq!(params.lines().count(), 1 + 2);

    // A seed override must change the stream; a repeated seed must not.
    let out_f = dir.path().join("f");
    let (ok, _, _) = run(&["--config", cfg, "--out", &out(&out_f), "--seed", "6", "genbench", "--episodes", "2"]);
    assert!(ok);
    let other = std::fs::read_to_string(out_f.join("instances.csv")).unwrap();
    assert_ne!(instances, other, "seed override should change generated data");
}

#[test]
fn cli_rejects_missing_config() {
    let (ok, _, stderr) = run(&["train"]);
    assert!(!ok);
    assert!(stderr.contains("--config"), "unhelpful error: {stderr}");
}
