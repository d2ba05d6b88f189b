//! Flat `key=value` run configuration.
//!
//! A run is described by a UTF-8 text file of dotted keys (`train.base_lr=
//! 0.01`), one per line, with `#` comments. Keys are grouped by the struct
//! they feed: `data.*` (generator and split sizes), `model.*` (architecture),
//! `loss.*` (objective weights), `train.*` (optimization), plus `out.dir`.
//! Unknown keys are rejected so typos fail loudly, and every run can write
//! its fully-resolved configuration back out as the same format — sorted,
//! diff-friendly, and parseable into an identical configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::OhemConfig;
use crate::model::SegNetConfig;
use crate::slim::WidthList;
use crate::train::{DatasetConfig, TeacherStrategy, TrainConfig};

/// File name of the resolved configuration written beside run outputs.
pub const RESOLVED_CONFIG: &str = "config_resolved.cfg";

/// Everything a command needs: dataset, architecture, objective, optimizer,
/// and the output directory. Derived fields (the model's class count, input
/// channels, and width list) are filled in from their single source of truth
/// when the configuration is finalized.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub model: SegNetConfig,
    /// Seed for parameter initialization (separate from `train.seed`, which
    /// drives batch sampling and augmentation).
    pub model_seed: u64,
    pub train: TrainConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let data = DatasetConfig::default();
        let model = SegNetConfig::defaults(data.synth.num_classes, train.widths.clone());
        RunConfig { data, model, model_seed: 0, train, out_dir: None }
    }
}

impl RunConfig {
    /// Parses `path` (when given) and applies `overrides` (`key=value`
    /// strings, later entries winning), then finalizes and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            for (lineno, key, value) in parse_config_text(p, &read_config(p)?)? {
                cfg.apply(&key, &value).map_err(|e| {
                    Error::config(format!("{}:{lineno}: {e}", p.display()))
                })?;
            }
        }
        for (key, value) in parse_overrides(overrides)? {
            cfg.apply(&key, &value)?;
        }
        cfg.finalize()?;
        Ok(cfg)
    }

    /// Applies one `key=value` assignment. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.num_classes" => self.data.synth.num_classes = parse(key, value)?,
            "data.height" => self.data.synth.height = parse(key, value)?,
            "data.width" => self.data.synth.width = parse(key, value)?,
            "data.shapes_min" => self.data.synth.shapes_min = parse(key, value)?,
            "data.shapes_max" => self.data.synth.shapes_max = parse(key, value)?,
            "data.noise_std" => self.data.synth.noise_std = parse(key, value)?,
            "data.boundary_radius" => self.data.synth.boundary_radius = parse(key, value)?,
            "data.seed" => self.data.synth.seed = parse(key, value)?,
            "data.train_samples" => self.data.train_samples = parse(key, value)?,
            "data.val_samples" => self.data.val_samples = parse(key, value)?,

            "model.stage_channels" => self.model.stage_channels = parse_list(key, value)?,
            "model.ppm_bins" => self.model.ppm_bins = parse_list(key, value)?,
            "model.ppm_channels" => self.model.ppm_channels = parse(key, value)?,
            "model.decoder_channels" => self.model.decoder_channels = parse(key, value)?,
            "model.boundary_channels" => self.model.boundary_channels = parse(key, value)?,
            "model.with_boundary" => self.model.with_boundary = parse_bool(key, value)?,
            "model.seed" => self.model_seed = parse(key, value)?,

            "loss.lambda1" => self.train.loss.lambda1 = parse(key, value)?,
            "loss.lambda2" => self.train.loss.lambda2 = parse(key, value)?,
            "loss.tau" => self.train.loss.tau = parse(key, value)?,
            "loss.ignore_index" => self.train.loss.ignore_index = parse(key, value)?,
            "loss.ohem" => {
                self.train.loss.ohem =
                    if parse_bool(key, value)? { Some(OhemConfig::default()) } else { None };
            }
            "loss.ohem_keep_threshold" => {
                self.train.loss.ohem.get_or_insert_with(OhemConfig::default).keep_threshold =
                    parse(key, value)?;
            }
            "loss.ohem_min_kept_fraction" => {
                self.train.loss.ohem.get_or_insert_with(OhemConfig::default).min_kept_fraction =
                    parse(key, value)?;
            }

            "train.iterations" => self.train.iterations = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.base_lr" => self.train.base_lr = parse(key, value)?,
            "train.power" => self.train.power = parse(key, value)?,
            "train.momentum" => self.train.momentum = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.widths" => {
                self.train.widths = WidthList::new(parse_list::<f64>(key, value)?)?;
            }
            "train.teacher_strategy" => {
                self.train.teacher_strategy = TeacherStrategy::parse(value)?;
            }
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.val_every" => self.train.val_every = parse(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,

            "out.dir" => {
                self.out_dir =
                    if value.is_empty() { None } else { Some(PathBuf::from(value)) };
            }

            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Propagates single-source-of-truth fields into the structs that mirror
    /// them, then validates everything.
    pub fn finalize(&mut self) -> Result<()> {
        self.model.num_classes = self.data.synth.num_classes;
        self.model.input_channels = 3;
        self.model.widths = self.train.widths.clone();
        self.train.loss.boundary_radius = self.data.synth.boundary_radius;

        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.data.synth.height % self.model.stride() != 0
            || self.data.synth.width % self.model.stride() != 0
        {
            return Err(Error::config(format!(
                "canvas {}×{} is not divisible by the encoder stride {}",
                self.data.synth.height,
                self.data.synth.width,
                self.model.stride()
            )));
        }
        Ok(())
    }

    /// The full configuration as sorted `key=value` lines. Parsing this text
    /// back reproduces the configuration exactly.
    pub fn resolved(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            kv("data.num_classes", self.data.synth.num_classes),
            kv("data.height", self.data.synth.height),
            kv("data.width", self.data.synth.width),
            kv("data.shapes_min", self.data.synth.shapes_min),
            kv("data.shapes_max", self.data.synth.shapes_max),
            kv("data.noise_std", self.data.synth.noise_std),
            kv("data.boundary_radius", self.data.synth.boundary_radius),
            kv("data.seed", self.data.synth.seed),
            kv("data.train_samples", self.data.train_samples),
            kv("data.val_samples", self.data.val_samples),
            kv("model.stage_channels", join(&self.model.stage_channels)),
            kv("model.ppm_bins", join(&self.model.ppm_bins)),
            kv("model.ppm_channels", self.model.ppm_channels),
            kv("model.decoder_channels", self.model.decoder_channels),
            kv("model.boundary_channels", self.model.boundary_channels),
            kv("model.with_boundary", self.model.with_boundary),
            kv("model.seed", self.model_seed),
            kv("loss.lambda1", self.train.loss.lambda1),
            kv("loss.lambda2", self.train.loss.lambda2),
            kv("loss.tau", self.train.loss.tau),
            kv("loss.ignore_index", self.train.loss.ignore_index),
            kv("loss.ohem", self.train.loss.ohem.is_some()),
            kv("train.iterations", self.train.iterations),
            kv("train.batch_size", self.train.batch_size),
            kv("train.base_lr", self.train.base_lr),
            kv("train.power", self.train.power),
            kv("train.momentum", self.train.momentum),
            kv("train.weight_decay", self.train.weight_decay),
            kv("train.widths", join(self.train.widths.multipliers())),
            kv("train.teacher_strategy", self.train.teacher_strategy.as_str()),
            kv("train.seed", self.train.seed),
            kv("train.val_every", self.train.val_every),
            kv("train.checkpoint_every", self.train.checkpoint_every),
            kv(
                "out.dir",
                self.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ];
        if let Some(ohem) = &self.train.loss.ohem {
            pairs.push(kv("loss.ohem_keep_threshold", ohem.keep_threshold));
            pairs.push(kv("loss.ohem_min_kept_fraction", ohem.min_kept_fraction));
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// The synthesis configuration the validation/eval split uses (identical
    /// generator, indices past the training range).
    pub fn synth(&self) -> &SynthConfig {
        &self.data.synth
    }
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

// ── Parsing ─────────────────────────────────────────────────────────────────

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config file {}: {e}", path.display())))
}

/// Splits config text into `(line number, key, value)` triples, skipping
/// blank lines and `#` comments. Duplicate keys within one file are errors —
/// overrides belong on the command line.
fn parse_config_text(path: &Path, text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = split_assignment(line)
            .map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !seen.insert(key.clone()) {
            return Err(Error::config(format!(
                "{}:{}: duplicate config key {key:?}",
                path.display(),
                i + 1
            )));
        }
        out.push((i + 1, key, value));
    }
    Ok(out)
}

/// Parses `--set`-style overrides. Later occurrences of a key override
/// earlier ones, so repetition is allowed here.
pub fn parse_overrides(overrides: &[String]) -> Result<Vec<(String, String)>> {
    overrides
        .iter()
        .map(|s| {
            split_assignment(s)
                .map_err(|e| Error::config(format!("invalid --set {s:?}: {e}")))
        })
        .collect()
}

fn split_assignment(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => {
            Ok((k.trim().to_string(), v.trim().to_string()))
        }
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("invalid value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!(
            "invalid value {value:?} for {key}: expected true or false"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Err(Error::config(format!("empty list for {key}")));
    }
    value.split(',').map(|part| parse(key, part.trim())).collect()
}

#[cfg(test)]
#[path = "config_tests.rs"]
mod tests;
