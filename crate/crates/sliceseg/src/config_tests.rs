//! Tests for flat key=value configuration parsing and round-tripping.

use std::path::PathBuf;

use super::*;

fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, text).unwrap();
    (dir, path)
}

#[test]
fn default_configuration_is_valid_and_round_trips_through_resolved_text() {
    let mut cfg = RunConfig::default();
    cfg.finalize().unwrap();
    let text = cfg.resolved();

    let (_dir, path) = write_config(&text);
    let reparsed = RunConfig::load(Some(&path), &[]).unwrap();
    assert_eq!(reparsed.resolved(), text, "resolved text must be a fixed point");
}

#[test]
fn resolved_text_is_sorted_by_key() {
    let mut cfg = RunConfig::default();
    cfg.finalize().unwrap();
    let text = cfg.resolved();
    let keys: Vec<&str> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn file_values_reach_their_structs_and_derived_fields_follow() {
    let (_dir, path) = write_config(
        "# run setup\n\
         data.num_classes = 7\n\
         data.boundary_radius = 2\n\
         \n\
         train.base_lr = 0.02\n\
         train.widths = 0.5, 1.0\n\
         model.stage_channels = 8, 16\n\
         train.teacher_strategy = mean\n",
    );
    let cfg = RunConfig::load(Some(&path), &[]).unwrap();

    assert_eq!(cfg.data.synth.num_classes, 7);
    assert_eq!(cfg.train.base_lr, 0.02);
    assert_eq!(cfg.train.widths.multipliers(), &[0.5, 1.0]);
    assert_eq!(cfg.model.stage_channels, vec![8, 16]);
    assert_eq!(cfg.train.teacher_strategy, TeacherStrategy::Mean);
    // Derived single-source-of-truth fields:
    assert_eq!(cfg.model.num_classes, 7);
    assert_eq!(cfg.model.widths.multipliers(), &[0.5, 1.0]);
    assert_eq!(cfg.train.loss.boundary_radius, 2);
}

#[test]
fn unknown_keys_are_rejected_naming_key_and_location() {
    let (_dir, path) = write_config("train.lr=0.1\n");
    let err = RunConfig::load(Some(&path), &[]).err().unwrap().to_string();
    assert!(err.contains("train.lr"), "unexpected message: {err}");
    assert!(err.contains("run.cfg:1"), "unexpected message: {err}");

    let err = RunConfig::load(None, &["data.classes=5".into()]).err().unwrap();
    assert!(err.to_string().contains("data.classes"));
}

#[test]
fn overrides_beat_file_values_and_later_overrides_win() {
    let (_dir, path) = write_config("train.base_lr=0.02\n");
    let cfg = RunConfig::load(
        Some(&path),
        &["train.base_lr=0.03".into(), "train.base_lr=0.04".into()],
    )
    .unwrap();
    assert_eq!(cfg.train.base_lr, 0.04);
}

#[test]
fn missing_config_file_error_names_the_path() {
    let err = RunConfig::load(Some(Path::new("/nonexistent/run.cfg")), &[])
        .err()
        .unwrap()
        .to_string();
    assert!(err.contains("/nonexistent/run.cfg"), "unexpected message: {err}");
}

#[test]
fn malformed_lines_duplicates_and_bad_values_are_rejected() {
    let (_dir, path) = write_config("just_a_token\n");
    let err = RunConfig::load(Some(&path), &[]).err().unwrap().to_string();
    assert!(err.contains("key=value"), "unexpected message: {err}");

    let (_dir, path) = write_config("train.base_lr=0.01\ntrain.base_lr=0.02\n");
    let err = RunConfig::load(Some(&path), &[]).err().unwrap().to_string();
    assert!(err.contains("duplicate"), "unexpected message: {err}");

    let err = RunConfig::load(None, &["train.batch_size=zero".into()])
        .err()
        .unwrap()
        .to_string();
    assert!(err.contains("train.batch_size"), "unexpected message: {err}");

    let err =
        RunConfig::load(None, &["bad-override".into()]).err().unwrap().to_string();
    assert!(err.contains("bad-override"), "unexpected message: {err}");
}

#[test]
fn structured_values_go_through_their_validators() {
    // Widths must ascend.
    assert!(RunConfig::load(None, &["train.widths=0.5,0.4".into()]).is_err());
    // The canvas must stay divisible by the encoder stride.
    let err = RunConfig::load(
        None,
        &["model.stage_channels=4,8,16,32,64".into(), "data.height=16".into(),
          "data.width=16".into()],
    )
    .err()
    .unwrap()
    .to_string();
    assert!(err.contains("stride"), "unexpected message: {err}");
    // Strategy names are checked.
    assert!(RunConfig::load(None, &["train.teacher_strategy=widest".into()]).is_err());
}

#[test]
fn ohem_keys_toggle_and_tune_hard_example_mining() {
    let cfg = RunConfig::load(None, &["loss.ohem=false".into()]).unwrap();
    assert!(cfg.train.loss.ohem.is_none());
    assert!(!cfg.resolved().contains("ohem_keep_threshold"));

    let cfg = RunConfig::load(None, &["loss.ohem_keep_threshold=0.9".into()]).unwrap();
    let ohem = cfg.train.loss.ohem.unwrap();
    assert_eq!(ohem.keep_threshold, 0.9);
    assert_eq!(ohem.min_kept_fraction, 1.0 / 16.0, "untouched field keeps its default");
}

#[test]
fn out_dir_key_parses_and_empty_means_unset() {
    let cfg = RunConfig::load(None, &["out.dir=runs/a".into()]).unwrap();
    assert_eq!(cfg.out_dir, Some(PathBuf::from("runs/a")));
    assert!(cfg.resolved().contains("out.dir=runs/a\n"));

    let cfg = RunConfig::load(None, &["out.dir=".into()]).unwrap();
    assert_eq!(cfg.out_dir, None);
}
