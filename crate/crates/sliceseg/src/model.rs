//! The width-switchable segmentation network.
//!
//! Topology (all widths share it; only channel counts change):
//!
//! ```text
//! image ─ stage0 ─ stage1 ─ stage2 ─ stage3 ─ PPM ─┐
//!            │        │        │                   │
//!            │        │        └──── lateral ──── add ◄─ upsample
//!            │        └───────────── lateral ──── add ◄─ upsample
//!            └────────────────────── lateral ──── add ◄─ upsample
//!                     │                            │
//!                     ▼                          fuse ─ classifier ─ ×2 up
//!              boundary head (train only)
//! ```
//!
//! Each encoder stage is two conv-BN-ReLU units, the second with stride 2, so
//! a four-stage encoder downsamples by 16. The boundary head hangs off the
//! second stage's output (1/4 resolution) and can be stripped for inference
//! without touching any segmentation parameter.

use crate::error::{Error, Result};
use crate::slim::{seeded_rng, ChannelSpec, SlimmableConv, SlimmableUnit, SwitchableBatchNorm, WidthList};
use crate::tensor::{
    adaptive_avg_pool, add, bilinear_upsample, concat_channels, sigmoid, softmax_channels, Elem,
    Mode, Tape, Tensor,
};

/// RNG stream ids, so one user seed produces independent draws for
/// independent purposes.
pub const STREAM_MODEL_INIT: u64 = 1;

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct SegNetConfig {
    pub num_classes: usize,
    /// Full channel count of each encoder stage.
    pub stage_channels: Vec<usize>,
    /// Adaptive-pool output sizes of the pyramid pooling branches.
    pub ppm_bins: Vec<usize>,
    /// Full channel count of each pooling branch after its 1×1 reduction.
    pub ppm_channels: usize,
    /// Full channel count of the decoder's lateral/fusion features.
    pub decoder_channels: usize,
    /// Full channel count of the boundary head's hidden unit.
    pub boundary_channels: usize,
    pub widths: WidthList,
    pub input_channels: usize,
    /// Whether the model carries its boundary-detection head.
    pub with_boundary: bool,
}

impl SegNetConfig {
    /// The desk-scale default: 4 stages, 64×64-friendly, boundary head on.
    pub fn defaults(num_classes: usize, widths: WidthList) -> Self {
        SegNetConfig {
            num_classes,
            stage_channels: vec![16, 32, 64, 128],
            ppm_bins: vec![1, 2, 4],
            ppm_channels: 32,
            decoder_channels: 32,
            boundary_channels: 32,
            widths,
            input_channels: 3,
            with_boundary: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("SegNetConfig", "num_classes must be at least 2"));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::invalid("SegNetConfig", "stage_channels must be nonempty"));
        }
        for pair in self.ppm_bins.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid(
                    "SegNetConfig",
                    format!("ppm_bins must be strictly increasing, got {:?}", self.ppm_bins),
                ));
            }
        }
        if self.ppm_bins.first().is_some_and(|&b| b == 0) {
            return Err(Error::invalid("SegNetConfig", "ppm_bins must be positive"));
        }
        if self.input_channels == 0
            || self.ppm_channels == 0
            || self.decoder_channels == 0
            || self.boundary_channels == 0
            || self.stage_channels.contains(&0)
        {
            return Err(Error::invalid("SegNetConfig", "channel counts must be positive"));
        }
        if self.with_boundary && self.stage_channels.len() < 2 {
            return Err(Error::invalid(
                "SegNetConfig",
                "the boundary head taps the second encoder stage; at least 2 stages required",
            ));
        }
        Ok(())
    }

    /// Total encoder downsampling factor; inputs must be divisible by it.
    pub fn stride(&self) -> usize {
        1 << self.stage_channels.len()
    }
}

// ── Model ───────────────────────────────────────────────────────────────────

struct EncoderStage<E: Elem> {
    a: SlimmableUnit<E>,
    b: SlimmableUnit<E>,
}

struct BoundaryHead<E: Elem> {
    unit: SlimmableUnit<E>,
    out: SlimmableConv<E>,
}

pub struct SlimSegModel<E: Elem> {
    cfg: SegNetConfig,
    stages: Vec<EncoderStage<E>>,
    ppm_branches: Vec<SlimmableUnit<E>>,
    ppm_fuse: SlimmableUnit<E>,
    /// Lateral 0 projects the PPM output; lateral `i ≥ 1` projects encoder
    /// stage `S−1−i`'s features, walking top-down.
    laterals: Vec<SlimmableUnit<E>>,
    dec_fuse: SlimmableUnit<E>,
    classifier: SlimmableConv<E>,
    boundary: Option<BoundaryHead<E>>,
}

/// One width's forward pass products, at full input resolution.
pub struct ForwardOutput<E: Elem> {
    /// Raw class scores `[B, K, H, W]`.
    pub seg_logits: Tensor<E>,
    /// Per-pixel softmax of the logits (channels sum to 1).
    pub seg_probs: Tensor<E>,
    /// Boundary confidence in `[0, 1]`, when the head ran.
    pub boundary_prob: Option<Tensor<E>>,
}

/// What a parameter tensor is, for optimizers (weight decay applies to
/// kernels only) and for serialization (running stats are state, not
/// trainable parameters).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

impl<E: Elem> SlimSegModel<E> {
    /// Builds a freshly initialized model. Construction order is fixed, so a
    /// given seed always produces bitwise-identical parameters.
    pub fn build(cfg: SegNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed, STREAM_MODEL_INIT);
        let w = &cfg.widths;

        let mut stages = Vec::new();
        let mut in_spec = ChannelSpec::fixed(cfg.input_channels);
        for &ch in &cfg.stage_channels {
            let a = SlimmableUnit::new(&mut rng, in_spec.clone(), ch, 3, 1, w)?;
            let b = SlimmableUnit::new(&mut rng, ChannelSpec::slim(ch), ch, 3, 2, w)?;
            stages.push(EncoderStage { a, b });
            in_spec = ChannelSpec::slim(ch);
        }
        let top = *cfg.stage_channels.last().unwrap();

        let mut ppm_branches = Vec::new();
        for _ in &cfg.ppm_bins {
            ppm_branches.push(SlimmableUnit::new(
                &mut rng,
                ChannelSpec::slim(top),
                cfg.ppm_channels,
                1,
                1,
                w,
            )?);
        }
        let mut cat_parts: Vec<ChannelSpec> = vec![ChannelSpec::slim(top)];
        cat_parts.extend(cfg.ppm_bins.iter().map(|_| ChannelSpec::slim(cfg.ppm_channels)));
        let cat_refs: Vec<&ChannelSpec> = cat_parts.iter().collect();
        let ppm_fuse =
            SlimmableUnit::new(&mut rng, ChannelSpec::concat(&cat_refs), top, 3, 1, w)?;

        let mut laterals = Vec::new();
        laterals.push(SlimmableUnit::new(
            &mut rng,
            ChannelSpec::slim(top),
            cfg.decoder_channels,
            1,
            1,
            w,
        )?);
        for i in (0..cfg.stage_channels.len() - 1).rev() {
            laterals.push(SlimmableUnit::new(
                &mut rng,
                ChannelSpec::slim(cfg.stage_channels[i]),
                cfg.decoder_channels,
                1,
                1,
                w,
            )?);
        }
        let dec_fuse = SlimmableUnit::new(
            &mut rng,
            ChannelSpec::slim(cfg.decoder_channels),
            cfg.decoder_channels,
            3,
            1,
            w,
        )?;
        let classifier = SlimmableConv::new(
            &mut rng,
            ChannelSpec::slim(cfg.decoder_channels),
            ChannelSpec::fixed(cfg.num_classes),
            1,
            1,
            0,
            true,
        )?;

        let boundary = if cfg.with_boundary {
            let unit = SlimmableUnit::new(
                &mut rng,
                ChannelSpec::slim(cfg.stage_channels[1]),
                cfg.boundary_channels,
                3,
                1,
                w,
            )?;
            let out = SlimmableConv::new(
                &mut rng,
                ChannelSpec::slim(cfg.boundary_channels),
                ChannelSpec::fixed(1),
                1,
                1,
                0,
                true,
            )?;
            Some(BoundaryHead { unit, out })
        } else {
            None
        };

        Ok(SlimSegModel {
            cfg,
            stages,
            ppm_branches,
            ppm_fuse,
            laterals,
            dec_fuse,
            classifier,
            boundary,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.cfg
    }

    pub fn widths(&self) -> &WidthList {
        &self.cfg.widths
    }

    pub fn has_boundary_head(&self) -> bool {
        self.boundary.is_some()
    }

    /// Drops the boundary head. Segmentation outputs are untouched;
    /// `forward(with_boundary: true)` becomes an error and checkpoints
    /// written afterwards omit the head's parameters.
    pub fn strip_boundary_head(&mut self) {
        self.boundary = None;
        self.cfg.with_boundary = false;
    }

    pub fn forward(
        &self,
        tape: &Tape<E>,
        image: &Tensor<E>,
        width_idx: usize,
        mode: Mode,
        with_boundary: bool,
    ) -> Result<ForwardOutput<E>> {
        let shape = image.shape();
        if shape.len() != 4 {
            return Err(Error::shape(
                "forward",
                format!("expected [B, C, H, W] input, got {shape:?}"),
            ));
        }
        let (h, w) = (shape[2], shape[3]);
        let stride = self.cfg.stride();
        if h % stride != 0 || w % stride != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "forward",
                format!(
                    "input spatial size {h}×{w} must be divisible by the encoder stride {stride}"
                ),
            ));
        }
        if width_idx >= self.cfg.widths.len() {
            return Err(Error::invalid(
                "forward",
                format!("width index {width_idx} out of range ({} widths)", self.cfg.widths.len()),
            ));
        }
        if with_boundary && self.boundary.is_none() {
            return Err(Error::invalid(
                "forward",
                "boundary output requested but the model has no boundary head",
            ));
        }
        let ws = &self.cfg.widths;

        // Encoder.
        let mut feat = image.clone();
        let mut stage_outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            feat = stage.a.forward(tape, &feat, ws, width_idx, mode)?;
            feat = stage.b.forward(tape, &feat, ws, width_idx, mode)?;
            stage_outs.push(feat.clone());
        }
        let top = stage_outs.last().unwrap();
        let (th, tw) = (top.shape()[2], top.shape()[3]);

        // Pyramid pooling: pool → 1×1 unit → upsample, concat with the top
        // features, fuse.
        let mut cat: Vec<Tensor<E>> = vec![top.clone()];
        for (branch, &bin) in self.ppm_branches.iter().zip(&self.cfg.ppm_bins) {
            let bin = bin.min(th).min(tw);
            let pooled = adaptive_avg_pool(tape, top, bin, bin)?;
            let reduced = branch.forward(tape, &pooled, ws, width_idx, mode)?;
            cat.push(bilinear_upsample(tape, &reduced, th, tw)?);
        }
        let cat_refs: Vec<&Tensor<E>> = cat.iter().collect();
        let fused = concat_channels(tape, &cat_refs)?;
        let ppm_out = self.ppm_fuse.forward(tape, &fused, ws, width_idx, mode)?;

        // Decoder: top-down adds over 1×1 laterals.
        let mut dec = self.laterals[0].forward(tape, &ppm_out, ws, width_idx, mode)?;
        for (li, lateral) in self.laterals.iter().enumerate().skip(1) {
            let stage_idx = self.stages.len() - 1 - li;
            let skip = &stage_outs[stage_idx];
            let (sh, sw) = (skip.shape()[2], skip.shape()[3]);
            let up = bilinear_upsample(tape, &dec, sh, sw)?;
            let lat = lateral.forward(tape, skip, ws, width_idx, mode)?;
            dec = add(tape, &up, &lat)?;
        }
        let dec = self.dec_fuse.forward(tape, &dec, ws, width_idx, mode)?;
        let logits_low = self.classifier.forward(tape, &dec, ws.get(width_idx))?;
        let seg_logits = bilinear_upsample(tape, &logits_low, h, w)?;
        let seg_probs = softmax_channels(tape, &seg_logits)?;

        let boundary_prob = if with_boundary {
            let head = self.boundary.as_ref().unwrap();
            // Stage index 1 sits at 1/4 input resolution.
            let low = &stage_outs[1];
            let bh = head.unit.forward(tape, low, ws, width_idx, mode)?;
            let bl = head.out.forward(tape, &bh, ws.get(width_idx))?;
            let bp = sigmoid(tape, &bl);
            Some(bilinear_upsample(tape, &bp, h, w)?)
        } else {
            None
        };

        Ok(ForwardOutput { seg_logits, seg_probs, boundary_prob })
    }

    // ── Parameter traversal ─────────────────────────────────────────────────

    /// Visits every stored tensor with a stable hierarchical name. Order and
    /// names are part of the checkpoint contract: they never depend on width
    /// or runtime state, only on the architecture config.
    pub fn visit(&self, f: &mut dyn FnMut(&str, ParamKind, &Tensor<E>)) {
        for (si, stage) in self.stages.iter().enumerate() {
            visit_unit(&format!("enc.s{si}.a"), &stage.a, f);
            visit_unit(&format!("enc.s{si}.b"), &stage.b, f);
        }
        for (bi, branch) in self.ppm_branches.iter().enumerate() {
            visit_unit(&format!("ppm.branch{bi}"), branch, f);
        }
        visit_unit("ppm.fuse", &self.ppm_fuse, f);
        for (li, lateral) in self.laterals.iter().enumerate() {
            visit_unit(&format!("dec.lateral{li}"), lateral, f);
        }
        visit_unit("dec.fuse", &self.dec_fuse, f);
        visit_conv("dec.classifier", &self.classifier, f);
        if let Some(head) = &self.boundary {
            visit_unit("boundary.unit", &head.unit, f);
            visit_conv("boundary.out", &head.out, f);
        }
    }

    /// Visits each switchable-BN record's "has seen a train batch" flag,
    /// keyed like `enc.s0.a.bn.w1` — serialized so a reloaded model knows
    /// which widths may run in eval mode.
    pub fn visit_bn_flags(&self, f: &mut dyn FnMut(&str, &std::cell::Cell<bool>)) {
        let mut each = |prefix: &str, bn: &SwitchableBatchNorm<E>| {
            for (wi, rec) in bn.records.iter().enumerate() {
                f(&format!("{prefix}.bn.w{wi}"), &rec.initialized);
            }
        };
        for (si, stage) in self.stages.iter().enumerate() {
            each(&format!("enc.s{si}.a"), &stage.a.bn);
            each(&format!("enc.s{si}.b"), &stage.b.bn);
        }
        for (bi, branch) in self.ppm_branches.iter().enumerate() {
            each(&format!("ppm.branch{bi}"), &branch.bn);
        }
        each("ppm.fuse", &self.ppm_fuse.bn);
        for (li, lateral) in self.laterals.iter().enumerate() {
            each(&format!("dec.lateral{li}"), &lateral.bn);
        }
        each("dec.fuse", &self.dec_fuse.bn);
        if let Some(head) = &self.boundary {
            each("boundary.unit", &head.unit.bn);
        }
    }

    /// Visits every convolution kernel (and bias, when present) together
    /// with the number of output and input channels active at the given
    /// width. Kernels are `[out, in, k, k]`, biases `[out]`; entries outside
    /// the leading `active_out × active_in` block are stored but unused at
    /// this width. Names match [`SlimSegModel::visit`].
    pub fn visit_conv_slices(
        &self,
        width_idx: usize,
        f: &mut dyn FnMut(&str, &Tensor<E>, usize, usize),
    ) -> Result<()> {
        if width_idx >= self.cfg.widths.len() {
            return Err(Error::invalid(
                "visit_conv_slices",
                format!("width index {width_idx} out of range"),
            ));
        }
        let wmul = self.cfg.widths.get(width_idx);
        for (si, stage) in self.stages.iter().enumerate() {
            visit_conv_slice(&format!("enc.s{si}.a.conv"), &stage.a.conv, wmul, f);
            visit_conv_slice(&format!("enc.s{si}.b.conv"), &stage.b.conv, wmul, f);
        }
        for (bi, branch) in self.ppm_branches.iter().enumerate() {
            visit_conv_slice(&format!("ppm.branch{bi}.conv"), &branch.conv, wmul, f);
        }
        visit_conv_slice("ppm.fuse.conv", &self.ppm_fuse.conv, wmul, f);
        for (li, lateral) in self.laterals.iter().enumerate() {
            visit_conv_slice(&format!("dec.lateral{li}.conv"), &lateral.conv, wmul, f);
        }
        visit_conv_slice("dec.fuse.conv", &self.dec_fuse.conv, wmul, f);
        visit_conv_slice("dec.classifier", &self.classifier, wmul, f);
        if let Some(head) = &self.boundary {
            visit_conv_slice("boundary.unit.conv", &head.unit.conv, wmul, f);
            visit_conv_slice("boundary.out", &head.out, wmul, f);
        }
        Ok(())
    }

    // ── Profiling ───────────────────────────────────────────────────────────

    /// Analytic floating-point operation count of one forward pass on a
    /// `height × width` input at the given width. Convolutions count
    /// 2·Cout·Cin·k² per output pixel; normalization, activations, pooling
    /// and resampling count 2 per element; the final softmax readout is not
    /// counted as network compute.
    pub fn count_flops(
        &self,
        width_idx: usize,
        height: usize,
        width: usize,
        with_boundary: bool,
    ) -> Result<FlopsReport> {
        if width_idx >= self.cfg.widths.len() {
            return Err(Error::invalid("count_flops", format!("width index {width_idx} out of range")));
        }
        if with_boundary && self.boundary.is_none() {
            return Err(Error::invalid("count_flops", "model has no boundary head"));
        }
        let stride = self.cfg.stride();
        if height % stride != 0 || width % stride != 0 || height == 0 || width == 0 {
            return Err(Error::shape(
                "count_flops",
                format!("input {height}×{width} must be divisible by the encoder stride {stride}"),
            ));
        }
        let wmul = self.cfg.widths.get(width_idx);
        let mut report = FlopsReport::default();

        let unit_cost = |unit: &SlimmableUnit<E>, h: usize, w: usize| -> (u64, usize, usize, usize) {
            let cin = unit.conv.in_spec.active(wmul);
            let cout = unit.conv.out_spec.active(wmul);
            let k = unit.conv.kernel_size();
            let oh = (h + 2 * (k / 2) - k) / unit.conv.stride + 1;
            let ow = (w + 2 * (k / 2) - k) / unit.conv.stride + 1;
            let conv = conv_flops(cout, cin, k, oh, ow);
            let elems = (cout * oh * ow) as u64;
            (conv + 4 * elems, cout, oh, ow) // + BN and ReLU at 2/element each
        };

        // Encoder.
        let (mut h, mut w) = (height, width);
        for stage in &self.stages {
            let (fa, _, ha, wa) = unit_cost(&stage.a, h, w);
            let (fb, _, hb, wb) = unit_cost(&stage.b, ha, wa);
            report.encoder += fa + fb;
            (h, w) = (hb, wb);
        }
        let (th, tw) = (h, w);
        let top_c = ChannelSpec::slim(*self.cfg.stage_channels.last().unwrap()).active(wmul);

        // PPM: pool (2/input element), 1×1 unit at bin size, upsample back.
        for (branch, &bin) in self.ppm_branches.iter().zip(&self.cfg.ppm_bins) {
            let bin = bin.min(th).min(tw);
            report.ppm += 2 * (top_c * th * tw) as u64; // adaptive pooling
            let (fb, cb, _, _) = unit_cost(branch, bin, bin);
            report.ppm += fb;
            report.ppm += 2 * (cb * th * tw) as u64; // upsample to top size
        }
        let (ff, _, _, _) = unit_cost(&self.ppm_fuse, th, tw);
        report.ppm += ff;

        // Decoder.
        let (fl, mut dc, mut dh, mut dw) = unit_cost(&self.laterals[0], th, tw);
        report.decoder += fl;
        for (li, lateral) in self.laterals.iter().enumerate().skip(1) {
            let factor = 1 << (self.stages.len() - 1 - (li - 1));
            let (sh, sw) = (height / factor, width / factor);
            report.decoder += 2 * (dc * sh * sw) as u64; // upsample
            let (fl, lc, _, _) = unit_cost(lateral, sh, sw);
            report.decoder += fl;
            report.decoder += 2 * (lc * sh * sw) as u64; // addition
            (dc, dh, dw) = (lc, sh, sw);
        }
        let (ff, _, _, _) = unit_cost(&self.dec_fuse, dh, dw);
        report.decoder += ff;
        let cin = self.classifier.in_spec.active(wmul);
        report.decoder += conv_flops(self.cfg.num_classes, cin, 1, dh, dw);
        report.decoder += 2 * (self.cfg.num_classes * height * width) as u64; // final upsample

        if with_boundary {
            let head = self.boundary.as_ref().unwrap();
            // The head taps the second stage's output at 1/4 resolution.
            let (bh, bw) = (height / 4, width / 4);
            let (fu, _, _, _) = unit_cost(&head.unit, bh, bw);
            report.boundary += fu;
            let cin = head.out.in_spec.active(wmul);
            report.boundary += conv_flops(1, cin, 1, bh, bw);
            report.boundary += 2 * (bh * bw) as u64; // sigmoid
            report.boundary += 2 * (height * width) as u64; // upsample
        }
        Ok(report)
    }

    /// Number of stored values the given width actually uses: active kernel
    /// and bias slices, plus that width's own BN records (affine parameters
    /// and running statistics).
    pub fn count_params(&self, width_idx: usize) -> Result<u64> {
        if width_idx >= self.cfg.widths.len() {
            return Err(Error::invalid("count_params", format!("width index {width_idx} out of range")));
        }
        let wmul = self.cfg.widths.get(width_idx);
        let mut total = 0u64;
        let conv_params = |conv: &SlimmableConv<E>| -> u64 {
            let cin = conv.in_spec.active(wmul);
            let cout = conv.out_spec.active(wmul);
            let k = conv.kernel_size();
            let mut n = (cout * cin * k * k) as u64;
            if conv.bias.is_some() {
                n += cout as u64;
            }
            n
        };
        let unit_params = |unit: &SlimmableUnit<E>| -> u64 {
            conv_params(&unit.conv) + 4 * unit.bn.records[width_idx].channels() as u64
        };
        for stage in &self.stages {
            total += unit_params(&stage.a) + unit_params(&stage.b);
        }
        for branch in &self.ppm_branches {
            total += unit_params(branch);
        }
        total += unit_params(&self.ppm_fuse);
        for lateral in &self.laterals {
            total += unit_params(lateral);
        }
        total += unit_params(&self.dec_fuse);
        total += conv_params(&self.classifier);
        if let Some(head) = &self.boundary {
            total += unit_params(&head.unit) + conv_params(&head.out);
        }
        Ok(total)
    }

    /// Total stored values across all widths (the full kernels plus every
    /// width's BN records) — the memory footprint of the slimmable model.
    pub fn total_stored_params(&self) -> u64 {
        let mut total = 0u64;
        self.visit(&mut |_, _, t| total += t.numel() as u64);
        total
    }
}

/// FLOPs of one convolution: two operations (multiply and add) per kernel
/// element per output pixel. Bias addition is not counted.
pub fn conv_flops(cout: usize, cin: usize, k: usize, oh: usize, ow: usize) -> u64 {
    2 * (cout * cin * k * k * oh * ow) as u64
}

/// Per-component FLOPs of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopsReport {
    pub encoder: u64,
    pub ppm: u64,
    pub decoder: u64,
    pub boundary: u64,
}

impl FlopsReport {
    pub fn total(&self) -> u64 {
        self.encoder + self.ppm + self.decoder + self.boundary
    }

    pub fn components(&self) -> [(&'static str, u64); 4] {
        [
            ("encoder", self.encoder),
            ("ppm", self.ppm),
            ("decoder", self.decoder),
            ("boundary", self.boundary),
        ]
    }
}

fn visit_conv<E: Elem>(
    prefix: &str,
    conv: &SlimmableConv<E>,
    f: &mut dyn FnMut(&str, ParamKind, &Tensor<E>),
) {
    f(&format!("{prefix}.kernel"), ParamKind::Kernel, &conv.kernel);
    if let Some(b) = &conv.bias {
        f(&format!("{prefix}.bias"), ParamKind::Bias, b);
    }
}

fn visit_conv_slice<E: Elem>(
    prefix: &str,
    conv: &SlimmableConv<E>,
    wmul: f64,
    f: &mut dyn FnMut(&str, &Tensor<E>, usize, usize),
) {
    let cout = conv.out_spec.active(wmul);
    let cin = conv.in_spec.active(wmul);
    f(&format!("{prefix}.kernel"), &conv.kernel, cout, cin);
    if let Some(b) = &conv.bias {
        f(&format!("{prefix}.bias"), b, cout, cin);
    }
}

fn visit_unit<E: Elem>(
    prefix: &str,
    unit: &SlimmableUnit<E>,
    f: &mut dyn FnMut(&str, ParamKind, &Tensor<E>),
) {
    visit_conv(&format!("{prefix}.conv"), &unit.conv, f);
    for (wi, rec) in unit.bn.records.iter().enumerate() {
        f(&format!("{prefix}.bn.w{wi}.gamma"), ParamKind::Gamma, &rec.gamma);
        f(&format!("{prefix}.bn.w{wi}.beta"), ParamKind::Beta, &rec.beta);
        f(&format!("{prefix}.bn.w{wi}.running_mean"), ParamKind::RunningMean, &rec.running_mean);
        f(&format!("{prefix}.bn.w{wi}.running_var"), ParamKind::RunningVar, &rec.running_var);
    }
}

#[cfg(test)]
#[path = "model_tests.rs"]
mod model_tests;
