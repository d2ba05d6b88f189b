//! Width-switchable building blocks.
//!
//! A *slimmable* layer owns one full-width parameter tensor and serves every
//! narrower configuration from the leading slice of it: width `w` of a
//! convolution with `C` full output channels uses kernel rows `0..⌈wC⌋`.
//! Slices nest, so the parameters of a narrow network are literally a prefix
//! of the wide network's — there are no per-width copies that could drift
//! apart. Batch normalization is the one exception: each width gets its own
//! gamma/beta/running statistics ("switchable" BN), because feature
//! statistics genuinely differ between widths.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm2d, conv2d, relu, slice_kernel, slice_vec, Elem, Mode, Tape, Tensor,
};

// ── Widths ──────────────────────────────────────────────────────────────────

/// The ordered set of width multipliers a model is trained to serve.
/// Multipliers are strictly increasing, lie in `(0, 1]`, and the last one is
/// always `1.0` (the full network must be a member, since every narrower
/// width distills from wider ones).
#[derive(Clone, Debug, PartialEq)]
pub struct WidthList(Vec<f64>);

impl WidthList {
    pub fn new(widths: Vec<f64>) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::invalid("WidthList", "at least one width is required"));
        }
        for pair in widths.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid(
                    "WidthList",
                    format!("widths must be strictly increasing, got {widths:?}"),
                ));
            }
        }
        if widths[0] <= 0.0 || *widths.last().unwrap() != 1.0 {
            return Err(Error::invalid(
                "WidthList",
                format!("widths must lie in (0, 1] and end at 1.0, got {widths:?}"),
            ));
        }
        Ok(WidthList(widths))
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one width
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.0[idx]
    }

    /// Index of the largest (full) width.
    pub fn largest(&self) -> usize {
        self.0.len() - 1
    }

    /// Finds the index of an exact multiplier value, e.g. from a CLI flag.
    pub fn index_of(&self, width: f64) -> Option<usize> {
        self.0.iter().position(|&w| w == width)
    }
}

/// Number of channels active at `width` out of `full`. Fixed channel counts
/// (network input, class logits) ignore the width; everything else rounds
/// half-up and never drops below one channel.
pub fn active_channels(width: f64, full: usize, fixed: bool) -> usize {
    if fixed {
        return full;
    }
    ((width * full as f64 + 0.5).floor() as usize).max(1)
}

/// Channel interface of a slimmable tensor: one or more concatenated parts,
/// each either width-scaled or fixed. A concat of slimmable feature maps does
/// not generally have `active(w) == active_channels(w, total)` because each
/// part rounds separately — this type keeps the arithmetic honest.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    parts: Vec<(usize, bool)>, // (full channel count, fixed?)
}

impl ChannelSpec {
    /// A single width-scaled feature group.
    pub fn slim(full: usize) -> Self {
        ChannelSpec { parts: vec![(full, false)] }
    }

    /// A channel count that never scales with width.
    pub fn fixed(n: usize) -> Self {
        ChannelSpec { parts: vec![(n, true)] }
    }

    /// The interface of a channel concatenation of `specs`.
    pub fn concat(specs: &[&ChannelSpec]) -> Self {
        let mut parts = Vec::new();
        for s in specs {
            parts.extend_from_slice(&s.parts);
        }
        ChannelSpec { parts }
    }

    pub fn full(&self) -> usize {
        self.parts.iter().map(|&(n, _)| n).sum()
    }

    pub fn active(&self, width: f64) -> usize {
        self.parts.iter().map(|&(n, fixed)| active_channels(width, n, fixed)).sum()
    }
}

// ── Slimmable convolution ───────────────────────────────────────────────────

/// A convolution whose kernel is stored at full width and sliced per forward
/// call. Narrow widths read (and, through the slice's backward, write
/// gradients into) only the leading `[cout(w), cin(w)]` block.
pub struct SlimmableConv<E: Elem> {
    pub kernel: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub in_spec: ChannelSpec,
    pub out_spec: ChannelSpec,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Elem> SlimmableConv<E> {
    /// He-initialized kernel (`N(0, √(2 / (cin·k²)))`), zero bias if `bias`.
    /// Parameter draws depend only on the RNG state and the full shape, never
    /// on the width list — two models that differ only in trained widths
    /// start from identical full-width parameters.
    pub fn new(
        rng: &mut ChaCha20Rng,
        in_spec: ChannelSpec,
        out_spec: ChannelSpec,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let cin = in_spec.full();
        let cout = out_spec.full();
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
            .map_err(|e| Error::invalid("SlimmableConv", e.to_string()))?;
        let data: Vec<E> =
            (0..cout * cin * k * k).map(|_| E::from_f64(normal.sample(rng))).collect();
        let kernel = Tensor::param(data, &[cout, cin, k, k])?;
        let bias = if bias {
            Some(Tensor::param(vec![E::zero(); cout], &[cout])?)
        } else {
            None
        };
        Ok(SlimmableConv { kernel, bias, in_spec, out_spec, stride, padding })
    }

    pub fn out_channels(&self, width: f64) -> usize {
        self.out_spec.active(width)
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>, width: f64) -> Result<Tensor<E>> {
        let expected_cin = self.in_spec.active(width);
        let got_cin = if x.shape().len() == 4 { x.shape()[1] } else { 0 };
        if got_cin != expected_cin {
            return Err(Error::shape(
                "slim_conv",
                format!(
                    "width {width} expects {expected_cin} input channels, input has {got_cin}"
                ),
            ));
        }
        let cout = self.out_spec.active(width);
        let (kern, bias);
        if cout == self.out_spec.full() && expected_cin == self.in_spec.full() {
            // Full width: use the parameters directly, no slice node needed.
            kern = self.kernel.clone();
            bias = self.bias.clone();
        } else {
            kern = slice_kernel(tape, &self.kernel, cout, expected_cin)?;
            bias = match &self.bias {
                Some(b) => Some(slice_vec(tape, b, cout)?),
                None => None,
            };
        }
        conv2d(tape, x, &kern, bias.as_ref(), self.stride, self.padding)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }
}

// ── Switchable batch normalization ──────────────────────────────────────────

/// Per-width batch-norm state. Channel count follows the owning layer's
/// output spec at that width.
pub struct BnRecord<E: Elem> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    /// Set by the first train-mode forward; eval before that is an error.
    pub initialized: Cell<bool>,
}

impl<E: Elem> BnRecord<E> {
    fn new(channels: usize) -> Result<Self> {
        Ok(BnRecord {
            gamma: Tensor::param(vec![E::one(); channels], &[channels])?,
            beta: Tensor::param(vec![E::zero(); channels], &[channels])?,
            running_mean: Tensor::from_vec(vec![E::zero(); channels], &[channels])?,
            running_var: Tensor::from_vec(vec![E::one(); channels], &[channels])?,
            initialized: Cell::new(false),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }
}

/// Batch normalization with one independent record per width. Forwards at
/// width index `n` read and update record `n` only, so training one width
/// never disturbs another width's statistics.
pub struct SwitchableBatchNorm<E: Elem> {
    pub records: Vec<BnRecord<E>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<E: Elem> SwitchableBatchNorm<E> {
    pub fn new(spec: &ChannelSpec, widths: &WidthList) -> Result<Self> {
        let records = widths
            .multipliers()
            .iter()
            .map(|&w| BnRecord::new(spec.active(w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SwitchableBatchNorm { records, momentum: 0.1, eps: 1e-5 })
    }

    pub fn forward(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
        width_idx: usize,
        mode: Mode,
    ) -> Result<Tensor<E>> {
        let rec = self.records.get(width_idx).ok_or_else(|| {
            Error::invalid(
                "switchable_bn",
                format!("width index {width_idx} out of range ({} widths)", self.records.len()),
            )
        })?;
        let out = batch_norm2d(
            tape,
            x,
            &rec.gamma,
            &rec.beta,
            &rec.running_mean,
            &rec.running_var,
            mode,
            self.momentum,
            self.eps,
            rec.initialized.get(),
        )?;
        if mode == Mode::Train {
            rec.initialized.set(true);
        }
        Ok(out)
    }
}

// ── Conv + BN + ReLU unit ───────────────────────────────────────────────────

/// The standard block everything else is assembled from: slimmable conv →
/// switchable BN → ReLU. Conv bias is omitted (BN's beta makes it redundant).
pub struct SlimmableUnit<E: Elem> {
    pub conv: SlimmableConv<E>,
    pub bn: SwitchableBatchNorm<E>,
}

impl<E: Elem> SlimmableUnit<E> {
    pub fn new(
        rng: &mut ChaCha20Rng,
        in_spec: ChannelSpec,
        out_channels: usize,
        k: usize,
        stride: usize,
        widths: &WidthList,
    ) -> Result<Self> {
        let out_spec = ChannelSpec::slim(out_channels);
        let conv = SlimmableConv::new(rng, in_spec, out_spec.clone(), k, stride, k / 2, false)?;
        let bn = SwitchableBatchNorm::new(&out_spec, widths)?;
        Ok(SlimmableUnit { conv, bn })
    }

    pub fn forward(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
        widths: &WidthList,
        width_idx: usize,
        mode: Mode,
    ) -> Result<Tensor<E>> {
        let y = self.conv.forward(tape, x, widths.get(width_idx))?;
        let y = self.bn.forward(tape, &y, width_idx, mode)?;
        Ok(relu(tape, &y))
    }
}

/// Draws a reproducible parameter RNG for a given seed and purpose tag.
/// Different tags (model init, data synthesis, batch sampling) get disjoint
/// streams even when the user passes the same seed everywhere.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
#[path = "slim_tests.rs"]
mod slim_tests;
