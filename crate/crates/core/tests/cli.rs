//! End-to-end runs of the command-line harness on a miniature setup.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taskmix"))
}

fn micro_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("micro.toml");
    std::fs::write(
        &path,
        r#"
master_seed = 11

[universe]
feature_dim = 8
n_databases = 2
samples_per_database = 200

[architecture]
input_dim = 8
hidden_dims = [10]
head_hidden_dim = 6

[phase1]
base_steps = 40
head_steps = 60
finetune_steps = 50
eval_samples = 80

[users]
count = 2
mixture_databases_min = 1
mixture_databases_max = 2
test_size = 40

[personalize]
k_shots = [5]
trials = 2
steps = 30
best_fit_ft = true
n_tasks_sweep = [1]
"#,
    )
    .unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn taskmix");
    assert!(
        out.status.success(),
        "taskmix {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    run_ok(&["finetune", "--config", cfg, "--out", out_s]);
    assert!(out.join("checkpoints/pre.ckpt").exists());
    assert!(out.join("checkpoints/db0.ckpt").exists());
    assert!(out.join("checkpoints/db1.ckpt").exists());
    assert!(out.join("checkpoints/manifest.json").exists());

    run_ok(&["extract", "--config", cfg, "--out", out_s]);
    assert!(out.join("task_vectors/db0.tv").exists());
    assert!(out.join("task_vectors/db1.tv").exists());
    let sim = std::fs::read_to_string(out.join("task_vectors/similarity.csv")).unwrap();
    let lines: Vec<&str> = sim.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("db0,1,"));

    run_ok(&["personalize", "--config", cfg, "--out", out_s]);
    let report_dir = out.join("personalize");
    assert!(report_dir.join("report.json").exists());
    assert!(report_dir.join("records.csv").exists());
    assert!(report_dir.join("summary.csv").exists());
    assert!(report_dir.join("similarity.csv").exists());
    let records = std::fs::read_to_string(report_dir.join("records.csv")).unwrap();
    // Header + (primary run + n=1 sweep run + best-fit baseline) x 2 users x 2 trials.
    assert_eq!(records.lines().count(), 1 + 3 * 2 * 2);
    let coef_files: Vec<_> = std::fs::read_dir(report_dir.join("coefficients"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(coef_files.iter().any(|f| f.ends_with(".txt")));
    assert!(coef_files.iter().any(|f| f.ends_with(".ckpt")));

    let report_out = dir.path().join("merged");
    run_ok(&[
        "report",
        "--runs",
        report_dir.to_str().unwrap(),
        "--out",
        report_out.to_str().unwrap(),
    ]);
    assert!(report_out.join("report/consolidated.json").exists());
    assert!(report_out.join("report/records.csv").exists());
    let consolidated = std::fs::read_to_string(report_out.join("report/records.csv")).unwrap();
    assert_eq!(consolidated.lines().count(), records.lines().count());

    run_ok(&["simbench", "--config", cfg, "--count", "20", "--out", out_s]);
    assert!(out.join("simbench/universe.json").exists());
    assert!(out.join("simbench/db0.csv").exists());
    let csv = std::fs::read_to_string(out.join("simbench/db1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn reruns_with_fixed_seed_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(&["finetune", "--config", cfg, "--out", out.to_str().unwrap()]);
        run_ok(&["extract", "--config", cfg, "--out", out.to_str().unwrap()]);
        run_ok(&[
            "personalize",
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    for rel in [
        "checkpoints/pre.ckpt",
        "checkpoints/db0.ckpt",
        "task_vectors/db0.tv",
        "task_vectors/similarity.csv",
        "personalize/report.json",
        "personalize/records.csv",
    ] {
        let a = std::fs::read(out_a.join(rel)).unwrap();
        let b = std::fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical runs");
    }

    // A different seed produces different checkpoints.
    let out_c = dir.path().join("c");
    run_ok(&[
        "finetune",
        "--config",
        cfg,
        "--seed",
        "99",
        "--out",
        out_c.to_str().unwrap(),
    ]);
    let a = std::fs::read(out_a.join("checkpoints/db0.ckpt")).unwrap();
    let c = std::fs::read(out_c.join("checkpoints/db0.ckpt")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn worker_pool_size_does_not_change_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out_a = dir.path().join("j1");
    let out_b = dir.path().join("j2");
    for (out, jobs) in [(&out_a, "1"), (&out_b, "2")] {
        let o = out.to_str().unwrap();
        run_ok(&["finetune", "--config", cfg, "--jobs", jobs, "--out", o]);
        run_ok(&["extract", "--config", cfg, "--jobs", jobs, "--out", o]);
        run_ok(&["personalize", "--config", cfg, "--jobs", jobs, "--out", o]);
    }
    let a = std::fs::read(out_a.join("personalize/report.json")).unwrap();
    let b = std::fs::read(out_b.join("personalize/report.json")).unwrap();
    assert_eq!(a, b, "parallelism changed report bytes");
}

#[test]
fn personalize_switches_do_not_touch_training_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_a = micro_config(dir.path());
    // Same config with every ablation switch flipped.
    let cfg_b = dir.path().join("flipped.toml");
    let mut text = std::fs::read_to_string(&cfg_a).unwrap();
    text = text.replace("best_fit_ft = true", "best_fit_ft = false");
    text.push_str("loss = \"mse\"\ninit = \"uniform\"\nlayer_mode = \"agnostic\"\n");
    std::fs::write(&cfg_b, text).unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&[
        "finetune",
        "--config",
        cfg_a.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    run_ok(&[
        "finetune",
        "--config",
        cfg_b.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    for rel in [
        "checkpoints/pre.ckpt",
        "checkpoints/db0.ckpt",
        "checkpoints/db1.ckpt",
    ] {
        let a = std::fs::read(out_a.join(rel)).unwrap();
        let b = std::fs::read(out_b.join(rel)).unwrap();
        assert_eq!(
            a, b,
            "{rel} changed when only personalization switches differ"
        );
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    // Unknown config key: exit 2.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mystery_key = 1\n").unwrap();
    let res = bin()
        .args([
            "finetune",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            out_s,
        ])
        .output()
        .unwrap();
    assert_eq!(
        res.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );

    // Invalid value: exit 2.
    let invalid = dir.path().join("invalid.toml");
    std::fs::write(&invalid, "[personalize]\nsteps = 0\n").unwrap();
    let res = bin()
        .args([
            "personalize",
            "--config",
            invalid.to_str().unwrap(),
            "--out",
            out_s,
        ])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));

    // Missing dependencies: exit 3.
    let res = bin().args(["extract", "--out", out_s]).output().unwrap();
    assert_eq!(
        res.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let res = bin()
        .args([
            "report",
            "--runs",
            dir.path().join("nope").to_str().unwrap(),
            "--out",
            out_s,
        ])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn report_merges_runs_additively_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    run_ok(&["finetune", "--config", cfg, "--out", out_s]);
    run_ok(&["extract", "--config", cfg, "--out", out_s]);
    run_ok(&["personalize", "--config", cfg, "--out", out_s]);

    // A second run with another seed in a sibling directory.
    let out2 = dir.path().join("out2");
    let out2_s = out2.to_str().unwrap();
    run_ok(&["finetune", "--config", cfg, "--seed", "12", "--out", out2_s]);
    run_ok(&["extract", "--config", cfg, "--seed", "12", "--out", out2_s]);
    run_ok(&[
        "personalize",
        "--config",
        cfg,
        "--seed",
        "12",
        "--out",
        out2_s,
    ]);

    let merged = dir.path().join("merged");
    let merged_s = merged.to_str().unwrap();
    let run_a = out.join("personalize");
    let run_b = out2.join("personalize");
    run_ok(&[
        "report",
        "--runs",
        run_a.to_str().unwrap(),
        run_b.to_str().unwrap(),
        "--out",
        merged_s,
    ]);

    let a = std::fs::read_to_string(run_a.join("records.csv")).unwrap();
    let b = std::fs::read_to_string(run_b.join("records.csv")).unwrap();
    let all = std::fs::read_to_string(merged.join("report/records.csv")).unwrap();
    assert_eq!(
        all.lines().count(),
        a.lines().count() + b.lines().count() - 1
    );

    // Re-reporting an unchanged directory is byte-identical.
    let first = std::fs::read(merged.join("report/consolidated.json")).unwrap();
    run_ok(&[
        "report",
        "--runs",
        run_a.to_str().unwrap(),
        run_b.to_str().unwrap(),
        "--out",
        merged_s,
    ]);
    assert_eq!(
        first,
        std::fs::read(merged.join("report/consolidated.json")).unwrap()
    );
}
