//! Joint training of every operating width in one pass.
//!
//! Each iteration walks the width list from widest to narrowest over a shared
//! batch. The widest sub-network learns from ground truth (hard-example-mined
//! cross-entropy, boundary detection, and the boundary-guided masked term);
//! every narrower sub-network distills from the detached outputs of wider
//! ones captured earlier in the same iteration. Gradients accumulate across
//! all widths and a single SGD-with-momentum update (kernels-only weight
//! decay, polynomial learning-rate decay) is applied at the end of the step.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::checkpoint::save_model;
use crate::data::{
    augment, batch_boundaries, batch_images, batch_labels, split_indices, synth_generate,
    AugmentParams, SegmentationSample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{argmax_labels, miou, ConfusionMatrix};
use crate::losses::{
    binary_ce, boundary_mask, combine_losses, cross_entropy, masked_ce, masked_kd,
    soft_target_ce, BoundaryMask, LossConfig, WidthBreakdown, WidthTerms,
};
use crate::model::{ParamKind, SlimSegModel};
use crate::slim::{seeded_rng, WidthList};
use crate::tensor::{add, backward, scale, Elem, Mode, Tape, Tensor};

/// RNG stream drawing the training-sample indices of each batch.
pub const STREAM_BATCH: u64 = 2;
/// RNG stream drawing the augmentation parameters of each batch element.
pub const STREAM_AUG: u64 = 3;

/// File names written into the output directory by [`train_loop`].
pub const FINAL_CHECKPOINT: &str = "model.slsckpt";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const VAL_LOG: &str = "val_log.tsv";

// ── Learning-rate schedule ──────────────────────────────────────────────────

/// Polynomial decay `base_lr · (1 − iter/iter_max)^power`. The first
/// iteration runs at `base_lr` and the rate reaches exactly zero at
/// `iter == iter_max`.
pub fn poly_lr(iter: u64, iter_max: u64, base_lr: f64, power: f64) -> f64 {
    assert!(iter_max > 0, "poly_lr: iter_max must be positive");
    assert!(iter <= iter_max, "poly_lr: iteration {iter} past the schedule end {iter_max}");
    base_lr * (1.0 - iter as f64 / iter_max as f64).powf(power)
}

// ── Optimizer ───────────────────────────────────────────────────────────────

/// SGD with classical momentum and decoupled-by-kind weight decay: the decay
/// `wd·θ` is added to the raw gradient of convolution kernels only (biases
/// and normalization affine parameters are left unregularized), then folded
/// into a momentum buffer shared by every width that touches the tensor.
///
/// Buffers live on the full parameter shape and are keyed by the stable
/// parameter names from [`SlimSegModel::visit`], so narrow slices and the
/// full tensor always update through the same velocity state.
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    buffers: HashMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Sgd {
        Sgd { momentum, weight_decay, buffers: HashMap::new() }
    }

    /// Updates one parameter in place: `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v`.
    /// Parameters without an accumulated gradient are skipped entirely (their
    /// buffers neither decay nor apply). At `lr == 0` the buffer still
    /// advances but `θ` is not rewritten, so parameter bytes are untouched.
    pub fn apply<E: Elem>(&mut self, name: &str, kind: ParamKind, t: &Tensor<E>, lr: f64) {
        if !kind.trainable() {
            return;
        }
        let Some(grad) = t.grad() else { return };
        let wd = if kind == ParamKind::Kernel { self.weight_decay } else { 0.0 };
        let buf = self.buffers.entry(name.to_string()).or_insert_with(|| vec![0.0; t.numel()]);
        let mut data = t.data_mut();
        for i in 0..data.len() {
            let g = grad[i].as_f64() + wd * data[i].as_f64();
            buf[i] = self.momentum * buf[i] + g;
            if lr != 0.0 {
                data[i] = E::from_f64(data[i].as_f64() - lr * buf[i]);
            }
        }
    }

    /// One optimizer step over every trainable tensor of the model.
    pub fn step<E: Elem>(&mut self, model: &SlimSegModel<E>, lr: f64) {
        model.visit(&mut |name, kind, t| self.apply(name, kind, t, lr));
    }
}

// ── Distillation teachers ───────────────────────────────────────────────────

/// How a narrower sub-network picks its distillation teacher among the wider
/// ones already evaluated in the current iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherStrategy {
    /// The next wider width (the default stepwise scheme).
    Prev,
    /// Always the widest sub-network.
    Largest,
    /// The element-wise mean of every wider sub-network's probabilities.
    Mean,
    /// Every wider sub-network separately; the per-teacher losses are
    /// averaged.
    Larger,
}

impl TeacherStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherStrategy::Prev => "prev",
            TeacherStrategy::Largest => "largest",
            TeacherStrategy::Mean => "mean",
            TeacherStrategy::Larger => "larger",
        }
    }

    pub fn parse(s: &str) -> Result<TeacherStrategy> {
        match s {
            "prev" => Ok(TeacherStrategy::Prev),
            "largest" => Ok(TeacherStrategy::Largest),
            "mean" => Ok(TeacherStrategy::Mean),
            "larger" => Ok(TeacherStrategy::Larger),
            other => Err(Error::invalid(
                "teacher_strategy",
                format!("unknown strategy {other:?} (expected prev, largest, mean, or larger)"),
            )),
        }
    }
}

/// Detached outputs of one wider width, frozen as distillation targets.
#[derive(Clone)]
pub struct TeacherEntry<E: Elem> {
    /// Softmax class probabilities `[B, K, H, W]`.
    pub seg: Tensor<E>,
    /// Boundary confidence `[B, 1, H, W]`, when the boundary head ran.
    pub boundary: Option<Tensor<E>>,
}

/// The teacher prediction(s) a given width trains against.
pub enum TeacherTarget<E: Elem> {
    Single(TeacherEntry<E>),
    Each(Vec<TeacherEntry<E>>),
}

/// Per-iteration store of detached teacher outputs, indexed by width. Filled
/// while walking the widths downward; rebuilt from scratch every iteration so
/// teachers always come from the current parameters.
pub struct TeacherCache<E: Elem> {
    strategy: TeacherStrategy,
    largest_idx: usize,
    entries: BTreeMap<usize, TeacherEntry<E>>,
}

impl<E: Elem> TeacherCache<E> {
    pub fn new(strategy: TeacherStrategy, num_widths: usize) -> TeacherCache<E> {
        assert!(num_widths > 0, "teacher cache needs at least one width");
        TeacherCache { strategy, largest_idx: num_widths - 1, entries: BTreeMap::new() }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Records the outputs of `width_idx` as future teacher material,
    /// detaching them so no gradient ever reaches a teacher. Strategies that
    /// can never read an entry drop it instead of storing it.
    pub fn save(&mut self, width_idx: usize, seg_probs: &Tensor<E>, boundary: Option<&Tensor<E>>) {
        let keep = match self.strategy {
            TeacherStrategy::Prev => {
                // Only the most recent (narrowest-so-far) width is ever read.
                self.entries.clear();
                true
            }
            TeacherStrategy::Largest => width_idx == self.largest_idx,
            TeacherStrategy::Mean | TeacherStrategy::Larger => true,
        };
        if keep {
            let entry =
                TeacherEntry { seg: seg_probs.detach(), boundary: boundary.map(Tensor::detach) };
            self.entries.insert(width_idx, entry);
        }
    }

    fn fetch(&self, width_idx: usize) -> Result<&TeacherEntry<E>> {
        self.entries.get(&width_idx).ok_or_else(|| {
            Error::invalid(
                "teacher_cache",
                format!("teacher output for width index {width_idx} is missing"),
            )
        })
    }

    /// The target(s) width `n` distills from, per the configured strategy.
    /// Requires `n` to be a non-largest width whose teachers were saved.
    pub fn target(&self, n: usize) -> Result<TeacherTarget<E>> {
        if n >= self.largest_idx {
            return Err(Error::invalid(
                "teacher_cache",
                format!("width index {n} has no wider width to distill from"),
            ));
        }
        match self.strategy {
            TeacherStrategy::Prev => Ok(TeacherTarget::Single(self.fetch(n + 1)?.clone())),
            TeacherStrategy::Largest => {
                Ok(TeacherTarget::Single(self.fetch(self.largest_idx)?.clone()))
            }
            TeacherStrategy::Mean => {
                let mut list = Vec::with_capacity(self.largest_idx - n);
                for j in n + 1..=self.largest_idx {
                    list.push(self.fetch(j)?);
                }
                Ok(TeacherTarget::Single(mean_entry(&list)?))
            }
            TeacherStrategy::Larger => {
                let mut list = Vec::with_capacity(self.largest_idx - n);
                for j in n + 1..=self.largest_idx {
                    list.push(self.fetch(j)?.clone());
                }
                Ok(TeacherTarget::Each(list))
            }
        }
    }
}

/// Element-wise mean of the teachers' probability maps (averaging preserves
/// per-pixel normalization up to rounding).
fn mean_entry<E: Elem>(list: &[&TeacherEntry<E>]) -> Result<TeacherEntry<E>> {
    let first = list.first().expect("mean_entry: empty teacher list");
    let seg = mean_tensors(list.iter().map(|e| &e.seg))?;
    let boundary = if first.boundary.is_some() {
        let maps = list
            .iter()
            .map(|e| {
                e.boundary.as_ref().ok_or_else(|| {
                    Error::invalid("teacher_cache", "teachers disagree on boundary availability")
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(mean_tensors(maps.into_iter())?)
    } else {
        None
    };
    Ok(TeacherEntry { seg, boundary })
}

fn mean_tensors<'a, E: Elem>(
    tensors: impl Iterator<Item = &'a Tensor<E>>,
) -> Result<Tensor<E>> {
    let mut acc: Vec<f64> = Vec::new();
    let mut shape: Vec<usize> = Vec::new();
    let mut count = 0usize;
    for t in tensors {
        if count == 0 {
            acc = t.data().iter().map(|v| v.as_f64()).collect();
            shape = t.shape().to_vec();
        } else {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "teacher_cache",
                    format!("teacher shapes differ: {:?} vs {shape:?}", t.shape()),
                ));
            }
            for (a, v) in acc.iter_mut().zip(t.data().iter()) {
                *a += v.as_f64();
            }
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    Tensor::from_vec(acc.into_iter().map(|v| E::from_f64(v * inv)).collect(), &shape)
}

// ── Configuration ───────────────────────────────────────────────────────────

/// Hyper-parameters of the joint training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Total optimizer steps (`iter_max` of the learning-rate schedule).
    pub iterations: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub power: f64,
    pub momentum: f64,
    /// L2 coefficient applied to convolution kernels only.
    pub weight_decay: f64,
    /// Width multipliers trained jointly; must match the model's.
    pub widths: WidthList,
    pub teacher_strategy: TeacherStrategy,
    pub loss: LossConfig,
    /// Seeds batch sampling and augmentation (model init is seeded
    /// separately at construction).
    pub seed: u64,
    /// Run validation every this many iterations (and always at the end);
    /// `0` disables periodic validation.
    pub val_every: u64,
    /// Write an intermediate checkpoint every this many iterations; `0`
    /// writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            base_lr: 0.01,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            widths: WidthList::new(vec![0.25, 0.5, 0.75, 1.0]).expect("default widths"),
            teacher_strategy: TeacherStrategy::Prev,
            loss: LossConfig::default(),
            seed: 0,
            val_every: 200,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return Err(Error::config(format!("power must be positive, got {}", self.power)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Where training data comes from: a procedural generator plus the index
/// ranges carved into a training and a validation split.
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub synth: SynthConfig,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { synth: SynthConfig::default(), train_samples: 2000, val_samples: 200 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.train_samples == 0 {
            return Err(Error::config("train_samples must be at least 1"));
        }
        Ok(())
    }
}

// ── One optimizer step ──────────────────────────────────────────────────────

/// Losses of one iteration, per width (ascending) plus the applied rate.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub lr: f64,
    pub per_width: Vec<WidthBreakdown>,
    pub total: f64,
}

/// Runs one full training step on `batch`: clears gradients, walks the
/// widths from widest to narrowest (switching normalization statistics via
/// the width index), backpropagates every width's loss into the shared
/// accumulators, then applies exactly one optimizer update at
/// `poly_lr(iter)`.
pub fn train_step<E: Elem>(
    model: &SlimSegModel<E>,
    batch: &[SegmentationSample],
    cfg: &TrainConfig,
    opt: &mut Sgd,
    iter: u64,
) -> Result<StepReport> {
    cfg.validate()?;
    if model.widths().multipliers() != cfg.widths.multipliers() {
        return Err(Error::invalid(
            "train_step",
            format!(
                "configured widths {:?} do not match the model's {:?}",
                cfg.widths.multipliers(),
                model.widths().multipliers()
            ),
        ));
    }
    let boundary_on = cfg.loss.lambda1 > 0.0 || cfg.loss.lambda2 > 0.0;
    if boundary_on && !model.has_boundary_head() {
        return Err(Error::invalid(
            "train_step",
            "boundary losses are enabled but the model has no boundary head",
        ));
    }

    let images = batch_images::<E>(batch)?;
    let labels = batch_labels(batch)?;
    let y_b = if cfg.loss.lambda1 > 0.0 { Some(batch_boundaries::<E>(batch)?) } else { None };

    model.visit(&mut |_, _, t| t.zero_grad());

    let n = cfg.widths.len();
    let mut cache = TeacherCache::<E>::new(cfg.teacher_strategy, n);
    cache.clear();
    let mut per_width: Vec<WidthBreakdown> = Vec::with_capacity(n);
    let mut total = 0.0;

    for wi in (0..n).rev() {
        let tape = Tape::new();
        let out = model.forward(&tape, &images, wi, Mode::Train, boundary_on)?;
        let mask: Option<BoundaryMask> = if cfg.loss.lambda2 > 0.0 {
            let p_b = out.boundary_prob.as_ref().expect("boundary head requested");
            Some(boundary_mask(p_b, cfg.loss.tau)?)
        } else {
            None
        };

        let (seg, boundary, guided);
        if wi == n - 1 {
            // Widest sub-network: supervised terms against ground truth.
            seg = cross_entropy(&tape, &out.seg_logits, &labels, &cfg.loss)?;
            boundary = match &y_b {
                Some(y) => {
                    let p_b = out.boundary_prob.as_ref().expect("boundary head requested");
                    Some(binary_ce(&tape, p_b, y)?)
                }
                None => None,
            };
            guided = match &mask {
                Some(m) => Some(masked_ce(&tape, &out.seg_logits, &labels, m, &cfg.loss)?),
                None => None,
            };
        } else {
            // Narrower sub-network: distill from detached wider outputs.
            let target = cache.target(wi)?;
            match &target {
                TeacherTarget::Single(t) => {
                    seg = soft_target_ce(&tape, &out.seg_logits, &t.seg)?;
                    boundary = if cfg.loss.lambda1 > 0.0 {
                        let p_b = out.boundary_prob.as_ref().expect("boundary head requested");
                        let t_b = t.boundary.as_ref().ok_or_else(|| {
                            Error::invalid("train_step", "teacher lacks a boundary map")
                        })?;
                        Some(binary_ce(&tape, p_b, t_b)?)
                    } else {
                        None
                    };
                    guided = match &mask {
                        Some(m) => Some(masked_kd(&tape, &out.seg_logits, &t.seg, m)?),
                        None => None,
                    };
                }
                TeacherTarget::Each(list) => {
                    seg = mean_loss(&tape, list.iter(), |t| {
                        soft_target_ce(&tape, &out.seg_logits, &t.seg)
                    })?;
                    boundary = if cfg.loss.lambda1 > 0.0 {
                        let p_b = out.boundary_prob.as_ref().expect("boundary head requested");
                        Some(mean_loss(&tape, list.iter(), |t| {
                            let t_b = t.boundary.as_ref().ok_or_else(|| {
                                Error::invalid("train_step", "teacher lacks a boundary map")
                            })?;
                            binary_ce(&tape, p_b, t_b)
                        })?)
                    } else {
                        None
                    };
                    guided = match &mask {
                        Some(m) => Some(mean_loss(&tape, list.iter(), |t| {
                            masked_kd(&tape, &out.seg_logits, &t.seg, m)
                        })?),
                        None => None,
                    };
                }
            }
        }

        let terms =
            vec![WidthTerms { width: cfg.widths.get(wi), seg, boundary, guided }];
        let (loss, breakdown) = combine_losses(&tape, &terms, &cfg.loss)?;
        let bd = breakdown.per_width.into_iter().next().expect("one width combined");
        check_finite(&bd, iter)?;
        backward(&tape, &loss)?;

        if wi > 0 {
            cache.save(wi, &out.seg_probs, out.boundary_prob.as_ref());
        }
        total += bd.total;
        per_width.push(bd);
    }

    let lr = poly_lr(iter, cfg.iterations, cfg.base_lr, cfg.power);
    opt.step(model, lr);

    per_width.sort_by(|a, b| a.width.partial_cmp(&b.width).expect("finite widths"));
    Ok(StepReport { lr, per_width, total })
}

/// Average of one loss term evaluated against several teachers.
fn mean_loss<'a, E: Elem, I, F>(tape: &Tape<E>, teachers: I, mut f: F) -> Result<Tensor<E>>
where
    I: Iterator<Item = &'a TeacherEntry<E>>,
    F: FnMut(&'a TeacherEntry<E>) -> Result<Tensor<E>>,
{
    let mut acc: Option<Tensor<E>> = None;
    let mut count = 0usize;
    for t in teachers {
        let term = f(t)?;
        acc = Some(match acc {
            Some(prev) => add(tape, &prev, &term)?,
            None => term,
        });
        count += 1;
    }
    let sum = acc.ok_or_else(|| Error::invalid("train_step", "no teachers to average"))?;
    Ok(if count > 1 { scale(tape, &sum, 1.0 / count as f64) } else { sum })
}

fn check_finite(bd: &WidthBreakdown, iter: u64) -> Result<()> {
    let checks =
        [("seg", bd.seg), ("boundary", bd.boundary), ("guided", bd.guided), ("total", bd.total)];
    for (name, value) in checks {
        if !value.is_finite() {
            return Err(Error::non_finite(
                "train_step",
                format!("{name} loss is {value} at width {} (iteration {iter})", bd.width),
            ));
        }
    }
    Ok(())
}

// ── Validation ──────────────────────────────────────────────────────────────

/// Mean IoU of one width over the validation split (deterministic samples,
/// no augmentation, frozen normalization statistics).
pub fn validate<E: Elem>(
    model: &SlimSegModel<E>,
    data: &DatasetConfig,
    width_idx: usize,
    batch_size: usize,
    ignore_index: u8,
) -> Result<f64> {
    data.validate()?;
    if batch_size == 0 {
        return Err(Error::invalid("validate", "batch_size must be at least 1"));
    }
    let (_, val) = split_indices(data.train_samples, data.val_samples);
    let indices: Vec<u64> = val.collect();
    if indices.is_empty() {
        return Err(Error::invalid("validate", "validation split is empty"));
    }
    let mut cm = ConfusionMatrix::new(data.synth.num_classes as usize)?;
    for chunk in indices.chunks(batch_size) {
        let samples = chunk
            .iter()
            .map(|&i| synth_generate(&data.synth, i))
            .collect::<Result<Vec<_>>>()?;
        let images = batch_images::<E>(&samples)?;
        let labels = batch_labels(&samples)?;
        let tape = Tape::new();
        let out = model.forward(&tape, &images, width_idx, Mode::Eval, false)?;
        let pred = argmax_labels(&out.seg_logits)?;
        cm.update(&pred, &labels, ignore_index)?;
    }
    Ok(miou(&cm)?.miou)
}

// ── Full run ────────────────────────────────────────────────────────────────

/// Artifacts of a complete run: the per-iteration loss log and the periodic
/// validation log (both tab-separated with a header line), plus the final
/// per-width validation mIoU.
pub struct TrainOutput {
    pub loss_log: String,
    pub val_log: String,
    /// `(width multiplier, mIoU)` from the last validation pass, ascending.
    pub final_val: Vec<(f64, f64)>,
}

/// Runs `cfg.iterations` training steps with deterministic batch sampling
/// and augmentation derived from `cfg.seed`. When `out_dir` is given, writes
/// the final checkpoint, optional periodic checkpoints, and both logs there.
pub fn train_loop<E: Elem>(
    model: &SlimSegModel<E>,
    data: &DatasetConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    data.validate()?;

    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut rng_batch = seeded_rng(cfg.seed, STREAM_BATCH);
    let mut rng_aug = seeded_rng(cfg.seed, STREAM_AUG);

    let mut loss_log = String::from("iter\tlr");
    for &w in cfg.widths.multipliers() {
        let _ = write!(loss_log, "\tseg_{w}\tboundary_{w}\tguided_{w}\ttotal_{w}");
    }
    loss_log.push('\n');
    let mut val_log = String::from("iter\twidth\tmiou\n");
    let mut final_val: Vec<(f64, f64)> = Vec::new();

    for iter in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let index = rng_batch.gen_range(0..data.train_samples as u64);
            let sample = synth_generate(&data.synth, index)?;
            let params = AugmentParams::draw(&mut rng_aug, sample.height, sample.width);
            batch.push(augment(&sample, &params, data.synth.boundary_radius)?);
        }

        let report = train_step(model, &batch, cfg, &mut opt, iter)?;
        let _ = write!(loss_log, "{}\t{:.8}", iter, report.lr);
        for bd in &report.per_width {
            let _ = write!(
                loss_log,
                "\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                bd.seg, bd.boundary, bd.guided, bd.total
            );
        }
        loss_log.push('\n');

        let done = iter + 1 == cfg.iterations;
        let at_val = cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0;
        if (at_val || done) && data.val_samples > 0 && cfg.val_every > 0 {
            let mut row = Vec::with_capacity(cfg.widths.len());
            for wi in 0..cfg.widths.len() {
                let m = validate(model, data, wi, cfg.batch_size, cfg.loss.ignore_index)?;
                let _ = writeln!(val_log, "{}\t{}\t{:.6}", iter + 1, cfg.widths.get(wi), m);
                row.push((cfg.widths.get(wi), m));
            }
            final_val = row;
        }

        if let Some(dir) = out_dir {
            let at_ckpt = cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0;
            if at_ckpt && !done {
                save_model(model, &dir.join(format!("checkpoint_{:06}.slsckpt", iter + 1)))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        save_model(model, &dir.join(FINAL_CHECKPOINT))?;
        let train_log = dir.join(TRAIN_LOG);
        std::fs::write(&train_log, &loss_log)
            .map_err(|e| Error::io(train_log.display().to_string(), e))?;
        let val_path = dir.join(VAL_LOG);
        std::fs::write(&val_path, &val_log)
            .map_err(|e| Error::io(val_path.display().to_string(), e))?;
    }

    Ok(TrainOutput { loss_log, val_log, final_val })
}

#[cfg(test)]
#[path = "train_tests.rs"]
mod tests;
