//! Command-line front end: `train`, `eval`, `infer`, and `profile`.
//!
//! Every command takes the same configuration plumbing — an optional
//! `--config` file of flat `key=value` lines plus repeatable `--set`
//! overrides — and is fully replayable: the resolved configuration and seeds
//! reproduce outputs bitwise. Exit codes: 0 success, 2 configuration errors,
//! 3 runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_model;
use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::data::{batch_images, batch_labels, load_sample, save_labels, synth_generate};
use crate::error::{Error, Result};
use crate::eval::{
    argmax_labels, diff_map, error_distance_histogram, histogram_rows, metrics_table, miou,
    ConfusionMatrix, DistanceHistogram, MetricsRow, DEFAULT_BIN_EDGES,
};
use crate::losses::LabelMap;
use crate::model::SlimSegModel;
use crate::tensor::{Mode, Tape};
use crate::train::train_loop;

#[derive(Parser)]
#[command(
    name = "sliceseg",
    about = "Width-switchable semantic segmentation: one network, many compute budgets",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train all configured widths jointly and write checkpoints + logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint per width: mIoU, FLOPs, parameters, and
    /// boundary error-distance histograms.
    Eval(EvalArgs),
    /// Predict a label map for one sample file at a chosen width.
    Infer(InferArgs),
    /// Print per-width FLOPs/parameter counts and the component split.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable, later wins).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides the `out.dir` key).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed: sets model, training, and data seeds at once.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint to evaluate.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Width multiplier to evaluate (repeatable; default: all in the
    /// checkpoint).
    #[arg(long = "width", value_name = "W")]
    widths: Vec<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint to run.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Input sample file (SLSD1).
    #[arg(long, value_name = "PATH")]
    sample: PathBuf,
    /// Width multiplier to run at.
    #[arg(long, value_name = "W")]
    width: f64,
    /// Drop the boundary head before running (segmentation is unchanged).
    #[arg(long)]
    strip_boundary: bool,
    /// Also predict at this width and write a disagreement map.
    #[arg(long, value_name = "W")]
    diff_width: Option<f64>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    common: Common,
    /// Profile this checkpoint's architecture instead of the configured one.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

/// Parses `args` and runs the selected command, translating errors into the
/// documented exit codes. The first element of `args` is the program name.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Profile(a) => cmd_profile(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 3,
            }
        }
    }
}

fn build_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(dir) = &common.out {
        cfg.out_dir = Some(dir.clone());
    }
    if let Some(seed) = common.seed {
        cfg.model_seed = seed;
        cfg.train.seed = seed;
        cfg.data.synth.seed = seed;
        cfg.finalize()?;
    }
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(RESOLVED_CONFIG);
    std::fs::write(&path, cfg.resolved())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_artifact(dir: Option<&Path>, name: &str, content: &str) -> Result<()> {
    if let Some(dir) = dir {
        let path = dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Resolves a `--width` flag against the model's width list.
fn width_index<E: crate::tensor::Elem>(model: &SlimSegModel<E>, width: f64) -> Result<usize> {
    model.widths().multipliers().iter().position(|&w| w == width).ok_or_else(|| {
        Error::invalid(
            "width",
            format!(
                "width {width} is not available; the checkpoint provides {:?}",
                model.widths().multipliers()
            ),
        )
    })
}

fn format_width(w: f64) -> String {
    format!("{w}")
}

// ── train ───────────────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let Some(out_dir) = cfg.out_dir.clone() else {
        return Err(Error::config("train needs an output directory (--out or out.dir)"));
    };
    prepare_out_dir(&out_dir, &cfg)?;

    let model = SlimSegModel::<f32>::build(cfg.model.clone(), cfg.model_seed)?;
    let output = train_loop(&model, &cfg.data, &cfg.train, Some(&out_dir))?;

    println!("trained {} iterations; outputs in {}", cfg.train.iterations, out_dir.display());
    for (width, m) in &output.final_val {
        println!("width {width}: val mIoU {m:.4}");
    }
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────────

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let model = load_model::<f32>(&args.checkpoint)?;

    let width_indices: Vec<usize> = if args.widths.is_empty() {
        (0..model.widths().len()).collect()
    } else {
        args.widths.iter().map(|&w| width_index(&model, w)).collect::<Result<_>>()?
    };

    if let Some(dir) = &cfg.out_dir {
        prepare_out_dir(dir, &cfg)?;
    }

    let (h, w) = (cfg.data.synth.height, cfg.data.synth.width);
    let mut rows = Vec::new();
    let mut report = String::new();
    for &wi in &width_indices {
        let (m, hist) = eval_width(&model, &cfg, wi)?;
        rows.push(MetricsRow {
            width: model.widths().get(wi),
            miou: m.miou,
            per_class: m.per_class,
            flops: model.count_flops(wi, h, w, false)?.total(),
            params: model.count_params(wi)?,
        });
        let hist_text = histogram_rows(&hist);
        let name = format!("histogram_w{}.tsv", format_width(model.widths().get(wi)));
        write_artifact(cfg.out_dir.as_deref(), &name, &hist_text)?;
        let _ = writeln!(
            report,
            "error-distance histogram, width {} ({} error pixels):\n{hist_text}",
            format_width(model.widths().get(wi)),
            hist.total()
        );
    }

    let table = metrics_table(&rows);
    write_artifact(cfg.out_dir.as_deref(), "metrics.tsv", &table)?;
    println!("{table}");
    print!("{report}");
    Ok(())
}

/// Confusion-matrix mIoU plus the boundary error-distance histogram of one
/// width over the validation split.
fn eval_width(
    model: &SlimSegModel<f32>,
    cfg: &RunConfig,
    width_idx: usize,
) -> Result<(crate::eval::MiouReport, DistanceHistogram)> {
    let (_, val) = crate::data::split_indices(cfg.data.train_samples, cfg.data.val_samples);
    let indices: Vec<u64> = val.collect();
    if indices.is_empty() {
        return Err(Error::invalid("eval", "validation split is empty"));
    }
    let ignore = cfg.train.loss.ignore_index;
    let mut cm = ConfusionMatrix::new(cfg.data.synth.num_classes)?;
    let mut hist: Option<DistanceHistogram> = None;
    for chunk in indices.chunks(cfg.train.batch_size.max(1)) {
        let samples = chunk
            .iter()
            .map(|&i| synth_generate(&cfg.data.synth, i))
            .collect::<Result<Vec<_>>>()?;
        let images = batch_images::<f32>(&samples)?;
        let labels = batch_labels(&samples)?;
        let tape = Tape::new();
        let out = model.forward(&tape, &images, width_idx, Mode::Eval, false)?;
        let pred = argmax_labels(&out.seg_logits)?;
        cm.update(&pred, &labels, ignore)?;
        let h = error_distance_histogram(&pred, &labels, ignore, &DEFAULT_BIN_EDGES)?;
        hist = Some(match hist {
            None => h,
            Some(mut acc) => {
                for (a, b) in acc.counts.iter_mut().zip(&h.counts) {
                    *a += b;
                }
                acc
            }
        });
    }
    Ok((miou(&cm)?, hist.expect("at least one batch")))
}

// ── infer ───────────────────────────────────────────────────────────────────

fn cmd_infer(args: InferArgs) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let mut model = load_model::<f32>(&args.checkpoint)?;
    if args.strip_boundary {
        model.strip_boundary_head();
    }
    let width_idx = width_index(&model, args.width)?;

    let (sample, num_classes) =
        load_sample(&args.sample, cfg.data.synth.boundary_radius)?;
    if num_classes != model.config().num_classes {
        return Err(Error::invalid(
            "infer",
            format!(
                "sample has {num_classes} classes but the checkpoint expects {}",
                model.config().num_classes
            ),
        ));
    }

    let Some(out_dir) = cfg.out_dir.clone() else {
        return Err(Error::config("infer needs an output directory (--out or out.dir)"));
    };
    prepare_out_dir(&out_dir, &cfg)?;

    let pred = predict(&model, &sample, width_idx)?;
    let name = format!("pred_w{}.slsl", format_width(args.width));
    save_labels(&out_dir.join(&name), pred.data(), sample.height, sample.width, num_classes)?;
    println!("wrote {}", out_dir.join(&name).display());

    if let Some(other) = args.diff_width {
        let other_idx = width_index(&model, other)?;
        let pred_b = predict(&model, &sample, other_idx)?;
        let gt = LabelMap::new(sample.labels.clone(), 1, sample.height, sample.width)?;
        let diff = diff_map(&pred, &pred_b, &gt)?;

        let mut text = format!("disagreement\t{:.6}\n", diff.disagreement);
        for y in 0..diff.height {
            let row: Vec<&str> = (0..diff.width)
                .map(|x| {
                    match diff.pixels[y * diff.width + x] {
                        crate::eval::DiffPixel::Agree => "0",
                        crate::eval::DiffPixel::Disagree(_) => "1",
                    }
                })
                .collect();
            text.push_str(&row.join("\t"));
            text.push('\n');
        }
        let diff_name = format!(
            "diff_w{}_w{}.tsv",
            format_width(args.width),
            format_width(other)
        );
        write_artifact(Some(&out_dir), &diff_name, &text)?;
        println!(
            "wrote {} (disagreement {:.6})",
            out_dir.join(&diff_name).display(),
            diff.disagreement
        );
    }
    Ok(())
}

fn predict(
    model: &SlimSegModel<f32>,
    sample: &crate::data::SegmentationSample,
    width_idx: usize,
) -> Result<LabelMap> {
    let images = batch_images::<f32>(std::slice::from_ref(sample))?;
    let tape = Tape::new();
    let out = model.forward(&tape, &images, width_idx, Mode::Eval, false)?;
    argmax_labels(&out.seg_logits)
}

// ── profile ─────────────────────────────────────────────────────────────────

fn cmd_profile(args: ProfileArgs) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let model = match &args.checkpoint {
        Some(path) => load_model::<f32>(path)?,
        None => SlimSegModel::<f32>::build(cfg.model.clone(), cfg.model_seed)?,
    };
    let (h, w) = (cfg.data.synth.height, cfg.data.synth.width);

    let mut table = String::from(
        "width\tflops\tparams\tencoder_pct\tppm_decoder_pct\tboundary_pct\n",
    );
    for wi in 0..model.widths().len() {
        let report = model.count_flops(wi, h, w, model.has_boundary_head())?;
        let total = report.total() as f64;
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}",
            format_width(model.widths().get(wi)),
            report.total(),
            model.count_params(wi)?,
            100.0 * report.encoder as f64 / total,
            100.0 * (report.ppm + report.decoder) as f64 / total,
            100.0 * report.boundary as f64 / total,
        );
    }
    let _ = writeln!(
        table,
        "stored_params\t{}\t(all widths share one parameter set)",
        model.total_stored_params()
    );
    print!("{table}");
    write_artifact(cfg.out_dir.as_deref(), "profile.tsv", &table)?;
    Ok(())
}

