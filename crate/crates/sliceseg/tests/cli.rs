//! End-to-end tests of the `sliceseg` binary: every subcommand, the exit-code
//! contract, and byte-level reproducibility of artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sliceseg::data::{load_labels, save_sample, synth_generate, SynthConfig};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sliceseg")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A configuration small enough that a full train/eval cycle stays fast.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "data.num_classes=3\n\
         data.height=32\n\
         data.width=32\n\
         data.train_samples=8\n\
         data.val_samples=4\n\
         data.shapes_min=1\n\
         data.shapes_max=3\n\
         model.stage_channels=4,6\n\
         model.ppm_bins=1,2\n\
         model.ppm_channels=8\n\
         model.decoder_channels=8\n\
         model.boundary_channels=4\n\
         train.iterations=3\n\
         train.batch_size=2\n\
         train.widths=0.5,1.0\n\
         train.val_every=3\n",
    )
    .unwrap();
    path
}

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        num_classes: 3,
        height: 32,
        width: 32,
        shapes_min: 1,
        shapes_max: 3,
        ..SynthConfig::default()
    }
}

/// Trains once into `dir/run` and returns (config path, checkpoint path).
fn train_once(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_tiny_config(dir);
    let out_dir = dir.join("run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    (cfg, out_dir.join("model.slsckpt"))
}

// ── train ───────────────────────────────────────────────────────────────────

#[test]
fn train_writes_checkpoint_logs_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let (_cfg, ckpt) = train_once(dir.path());
    let run_dir = ckpt.parent().unwrap();

    assert!(ckpt.exists());
    assert!(run_dir.join("train_log.tsv").exists());
    assert!(run_dir.join("val_log.tsv").exists());
    let resolved = std::fs::read_to_string(run_dir.join("config_resolved.cfg")).unwrap();
    assert!(resolved.contains("train.iterations=3\n"));
    assert!(resolved.contains("train.seed=5\n"), "--seed must land in the resolved config");

    let log = std::fs::read_to_string(run_dir.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3, "header plus one line per iteration");
}

#[test]
fn train_twice_with_the_same_seed_produces_identical_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        bytes.push(std::fs::read(out_dir.join("model.slsckpt")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "same config and seed must replay bitwise");
}

#[test]
fn train_with_a_single_width_logs_no_distillation_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("solo");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "train.widths=1.0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(out_dir.join("train_log.tsv")).unwrap();
    let header = log.lines().next().unwrap();
    assert_eq!(header, "iter\tlr\tseg_1\tboundary_1\tguided_1\ttotal_1");
}

#[test]
fn train_without_an_output_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("output directory"));
}

// ── configuration errors ────────────────────────────────────────────────────

#[test]
fn missing_config_file_exits_2_and_names_the_path() {
    let out = run(&["train", "--config", "/nonexistent/run.cfg", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/run.cfg"));
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "train.lr=0.1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train.lr"));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    let out = run(&["segment"]);
    assert_eq!(out.status.code(), Some(2), "unknown subcommand is a usage error");
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("train"));
}

// ── eval ────────────────────────────────────────────────────────────────────

#[test]
fn eval_reports_per_width_metrics_and_histograms_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = train_once(dir.path());

    let eval = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        (stdout(&out), std::fs::read(out_dir.join("metrics.tsv")).unwrap(), out_dir)
    };

    let (text_a, metrics_a, out_a) = eval("eval_a");
    let (text_b, metrics_b, _) = eval("eval_b");
    assert_eq!(text_a, text_b, "evaluation must be deterministic");
    assert_eq!(metrics_a, metrics_b);

    let metrics = String::from_utf8(metrics_a).unwrap();
    assert!(metrics.starts_with("width\tmiou\tiou_0\tiou_1\tiou_2\tflops\tparams\n"));
    assert_eq!(metrics.lines().count(), 3, "header plus one row per width");
    assert!(out_a.join("histogram_w0.5.tsv").exists());
    assert!(out_a.join("histogram_w1.tsv").exists());
    let hist = std::fs::read_to_string(out_a.join("histogram_w1.tsv")).unwrap();
    assert!(hist.starts_with("bin_low\tbin_high\tcount\n"));
    assert!(hist.lines().last().unwrap().starts_with("10\tinf\t"));
}

#[test]
fn eval_rejects_a_width_absent_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = train_once(dir.path());
    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--width",
        "0.6",
    ]);
    assert_ne!(out.status.code(), Some(0));
    let msg = stderr(&out);
    assert!(msg.contains("0.6"), "unexpected message: {msg}");
    assert!(msg.contains("0.5") && msg.contains("1"), "must list available widths: {msg}");
}

// ── infer ───────────────────────────────────────────────────────────────────

#[test]
fn infer_writes_a_label_map_that_round_trips_through_load() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = train_once(dir.path());

    let sample = synth_generate(&tiny_synth(), 100).unwrap();
    let sample_path = dir.path().join("sample.slsd");
    save_sample(&sample_path, &sample, 3).unwrap();

    let out_dir = dir.path().join("infer");
    let out = run(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--sample",
        sample_path.to_str().unwrap(),
        "--width",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (labels, h, w, k) = load_labels(&out_dir.join("pred_w0.5.slsl")).unwrap();
    assert_eq!((h, w, k), (32, 32, 3));
    assert_eq!(labels.len(), 32 * 32);
    assert!(labels.iter().all(|&l| l < 3), "predictions never emit the ignore value");
}

#[test]
fn infer_diff_against_itself_reports_zero_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = train_once(dir.path());

    let sample = synth_generate(&tiny_synth(), 101).unwrap();
    let sample_path = dir.path().join("sample.slsd");
    save_sample(&sample_path, &sample, 3).unwrap();

    let out_dir = dir.path().join("selfdiff");
    let out = run(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--sample",
        sample_path.to_str().unwrap(),
        "--width",
        "1.0",
        "--diff-width",
        "1.0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let diff = std::fs::read_to_string(out_dir.join("diff_w1_w1.tsv")).unwrap();
    assert!(diff.starts_with("disagreement\t0.000000\n"), "got: {}", diff.lines().next().unwrap());
}

#[test]
fn infer_with_a_stripped_boundary_head_predicts_identical_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = train_once(dir.path());

    let sample = synth_generate(&tiny_synth(), 102).unwrap();
    let sample_path = dir.path().join("sample.slsd");
    save_sample(&sample_path, &sample, 3).unwrap();

    let mut outputs = Vec::new();
    for (name, strip) in [("full", false), ("stripped", true)] {
        let out_dir = dir.path().join(name);
        let mut args = vec![
            "infer",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--sample",
            sample_path.to_str().unwrap(),
            "--width",
            "1.0",
            "--out",
            out_dir.to_str().unwrap(),
        ];
        if strip {
            args.push("--strip-boundary");
        }
        let out = run(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(std::fs::read(out_dir.join("pred_w1.slsl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "the boundary head must not affect segmentation");
}

// ── profile ─────────────────────────────────────────────────────────────────

#[test]
fn profile_percentages_sum_to_one_hundred_and_flops_grow_with_width() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = run(&["profile", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let text = stdout(&out);
    let mut prev_flops = 0u64;
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "stored_params" {
            continue;
        }
        rows += 1;
        let flops: u64 = fields[1].parse().unwrap();
        assert!(flops > prev_flops, "FLOPs must grow with width");
        prev_flops = flops;
        let pct_sum: f64 = fields[3..6].iter().map(|f| f.parse::<f64>().unwrap()).sum();
        assert!((pct_sum - 100.0).abs() <= 0.1, "components sum to {pct_sum}");
    }
    assert_eq!(rows, 2);
}

#[test]
fn profile_accepts_a_checkpoint_instead_of_an_architecture_config() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = train_once(dir.path());
    let out = run(&[
        "profile",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("stored_params"));
}
