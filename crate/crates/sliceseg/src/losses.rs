//! Loss terms for boundary-guided slimmable training.
//!
//! Three families, combined per width as `seg + λ₁·boundary + λ₂·guided`:
//!
//! * **Segmentation** — hard-label cross-entropy (optionally with online hard
//!   example mining) for the full-width network, soft-target cross-entropy
//!   against a detached teacher for every narrower width.
//! * **Boundary** — binary cross-entropy on the auxiliary boundary head,
//!   against rasterized ground-truth borders at full width and against the
//!   teacher's boundary probabilities below it.
//! * **Boundary-guided** — the same segmentation losses restricted to pixels
//!   the width's own boundary head is confident about (`p_b > τ`), a learned
//!   hard-pixel mining signal.
//!
//! All losses are fused ops: the forward computes the scalar directly and the
//! recorded backward writes `(softmax − target) / n` style gradients straight
//! into the logits, which keeps tapes short and reductions in a fixed order.

use crate::error::{Error, Result};
use crate::tensor::{add, dims4, scale, Elem, Tape, Tensor};

// ── Configuration ───────────────────────────────────────────────────────────

/// Online hard example mining: keep only pixels the model is still unsure
/// about, but never fewer than a floor fraction of the valid pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OhemConfig {
    /// Pixels with true-class probability below this stay in the loss.
    pub keep_threshold: f64,
    /// At least `ceil(fraction · valid_pixels)` pixels always contribute,
    /// backfilled from the hardest excluded ones.
    pub min_kept_fraction: f64,
}

impl Default for OhemConfig {
    fn default() -> Self {
        OhemConfig { keep_threshold: 0.7, min_kept_fraction: 1.0 / 16.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the boundary-detection term.
    pub lambda1: f64,
    /// Weight of the boundary-guided segmentation term.
    pub lambda2: f64,
    /// Boundary-confidence threshold for the guided mask (strict `>`).
    pub tau: f64,
    /// Pixels within this Euclidean distance of a label change count as
    /// boundary in the rasterized ground truth.
    pub boundary_radius: usize,
    /// Label value excluded from all hard-label losses.
    pub ignore_index: u8,
    /// Hard example mining for the plain ground-truth cross-entropy only;
    /// the masked (guided) loss is already a mining strategy and distillation
    /// targets are dense, so neither applies OHEM.
    pub ohem: Option<OhemConfig>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 10.0,
            lambda2: 1.0,
            tau: 0.7,
            boundary_radius: 3,
            ignore_index: 255,
            ohem: Some(OhemConfig::default()),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::invalid("LossConfig", "lambda weights must be non-negative"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(
                "LossConfig",
                format!("tau must lie strictly between 0 and 1, got {}", self.tau),
            ));
        }
        if self.boundary_radius == 0 {
            return Err(Error::invalid("LossConfig", "boundary_radius must be at least 1"));
        }
        if let Some(o) = &self.ohem {
            if !(o.keep_threshold > 0.0 && o.keep_threshold <= 1.0) {
                return Err(Error::invalid(
                    "LossConfig",
                    format!("ohem keep_threshold must lie in (0, 1], got {}", o.keep_threshold),
                ));
            }
            if !(0.0..=1.0).contains(&o.min_kept_fraction) {
                return Err(Error::invalid(
                    "LossConfig",
                    format!("ohem min_kept_fraction must lie in [0, 1], got {}", o.min_kept_fraction),
                ));
            }
        }
        Ok(())
    }
}

// ── Label and mask containers ───────────────────────────────────────────────

/// Dense per-pixel class ids, `[B, H, W]` row-major. Class values are small
/// integers plus a designated ignore value; keeping them as `u8` rather than
/// floats makes "label" a type-level statement.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(data: Vec<u8>, batch: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != batch * height * width {
            return Err(Error::shape(
                "LabelMap",
                format!(
                    "expected {} values for [{batch}, {height}, {width}], got {}",
                    batch * height * width,
                    data.len()
                ),
            ));
        }
        Ok(LabelMap { batch, height, width, data })
    }

    /// A single unbatched `[H, W]` map.
    pub fn single(data: Vec<u8>, height: usize, width: usize) -> Result<Self> {
        Self::new(data, 1, height, width)
    }

    /// Stacks `[H, W]`-compatible maps along the batch axis.
    pub fn stack(maps: &[&LabelMap]) -> Result<LabelMap> {
        if maps.is_empty() {
            return Err(Error::invalid("LabelMap", "cannot stack zero maps"));
        }
        let (h, w) = (maps[0].height, maps[0].width);
        let mut data = Vec::with_capacity(maps.iter().map(|m| m.data.len()).sum());
        let mut batch = 0;
        for m in maps {
            if m.height != h || m.width != w {
                return Err(Error::shape("LabelMap", "stacked maps must share spatial size"));
            }
            data.extend_from_slice(&m.data);
            batch += m.batch;
        }
        LabelMap::new(data, batch, h, w)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.height, self.width)
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> u8 {
        self.data[(b * self.height + y) * self.width + x]
    }

    fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// Boolean confidence mask over pixels, aligned with a `[B, 1, H, W]`
/// boundary-probability map. Construction thresholds are strict, so a score
/// exactly at τ is *not* valid.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMask {
    batch: usize,
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl BoundaryMask {
    /// A mask marking every pixel valid (restriction to the full set).
    pub fn all_valid(batch: usize, height: usize, width: usize) -> Self {
        BoundaryMask { batch, height, width, valid: vec![true; batch * height * width] }
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> bool {
        self.valid[(b * self.height + y) * self.width + x]
    }
}

/// Thresholds a `[B, 1, H, W]` boundary-probability map into a mask with the
/// strict comparison `p_b > tau`. The mask is a constant: gradients never
/// flow through the thresholding, only through losses evaluated at the
/// selected pixels.
pub fn boundary_mask<E: Elem>(p_b: &Tensor<E>, tau: f64) -> Result<BoundaryMask> {
    let (b, c, h, w) = dims4("boundary_mask", p_b)?;
    if c != 1 {
        return Err(Error::shape(
            "boundary_mask",
            format!("expected a single-channel map, got {c} channels"),
        ));
    }
    let data = p_b.data();
    let valid = data.iter().map(|&v| v.as_f64() > tau).collect();
    Ok(BoundaryMask { batch: b, height: h, width: w, valid })
}

// ── Shared fused cross-entropy cores ────────────────────────────────────────

/// Per-pixel log-sum-exp and the log-probability of one class, numerically
/// stabilized by max subtraction. `base` indexes the pixel within `[B,H,W]`
/// flat order; channel stride inside a batch item is `hw`.
#[inline]
fn pixel_lse<E: Elem>(logits: &[E], bi: usize, rem: usize, k: usize, hw: usize) -> E {
    let base = bi * k * hw + rem;
    let mut m = logits[base];
    for c in 1..k {
        let v = logits[base + c * hw];
        if v > m {
            m = v;
        }
    }
    let mut s = E::zero();
    for c in 0..k {
        s += (logits[base + c * hw] - m).exp();
    }
    m + s.ln()
}

/// Hard-label cross-entropy averaged over an explicit pixel set (flat
/// `[B,H,W]` indices, strictly increasing). Empty set → constant zero with no
/// gradient. The backward writes `(softmax − one_hot) / n` at each selected
/// pixel and leaves every other pixel untouched.
fn ce_over_pixels<E: Elem>(
    tape: &Tape<E>,
    logits: &Tensor<E>,
    labels: &LabelMap,
    selected: Vec<u32>,
) -> Result<Tensor<E>> {
    let (_b, k, h, w) = dims4("cross_entropy", logits)?;
    let hw = h * w;
    if selected.is_empty() {
        return Ok(Tensor::scalar(E::zero()));
    }

    let sel_labels: Vec<u8> = selected.iter().map(|&p| labels.data[p as usize]).collect();
    let mut total = E::zero();
    {
        let ld = logits.data();
        for (&p, &lab) in selected.iter().zip(&sel_labels) {
            let (bi, rem) = (p as usize / hw, p as usize % hw);
            let lse = pixel_lse(&ld, bi, rem, k, hw);
            total += lse - ld[bi * k * hw + lab as usize * hw + rem];
        }
    }
    let n = selected.len();
    let loss = total / E::from_f64(n as f64);

    let rg = logits.requires_grad();
    let out = Tensor::output(vec![loss], vec![], rg);
    if rg {
        let lg = logits.clone();
        tape.record(&[logits], &out, Box::new(move |gout, sink| {
            let g = gout[0] / E::from_f64(n as f64);
            let ld = lg.data();
            let buf = sink.buf(&lg);
            for (&p, &lab) in selected.iter().zip(&sel_labels) {
                let (bi, rem) = (p as usize / hw, p as usize % hw);
                let base = bi * k * hw + rem;
                let lse = pixel_lse(&ld, bi, rem, k, hw);
                for c in 0..k {
                    let soft = (ld[base + c * hw] - lse).exp();
                    let tgt = if c as u8 == lab { E::one() } else { E::zero() };
                    buf[base + c * hw] += (soft - tgt) * g;
                }
            }
        }));
    }
    Ok(out)
}

/// Soft-target cross-entropy averaged over an explicit pixel set. The
/// teacher must be a detached probability map; gradients flow to the student
/// only, as `(Σt·softmax − t) / n`.
fn soft_ce_over_pixels<E: Elem>(
    tape: &Tape<E>,
    student_logits: &Tensor<E>,
    teacher_probs: &Tensor<E>,
    selected: Vec<u32>,
) -> Result<Tensor<E>> {
    let (b, k, h, w) = dims4("soft_target_ce", student_logits)?;
    if teacher_probs.shape() != student_logits.shape() {
        return Err(Error::shape(
            "soft_target_ce",
            format!(
                "student shape {:?} does not match teacher shape {:?}",
                student_logits.shape(),
                teacher_probs.shape()
            ),
        ));
    }
    if teacher_probs.requires_grad() {
        return Err(Error::invalid(
            "soft_target_ce",
            "teacher probabilities must be detached before use as a distillation target",
        ));
    }
    let hw = h * w;
    {
        // Validate the teacher is a probability map everywhere, independent of
        // the selection: catching a bad teacher late is much harder to debug.
        let td = teacher_probs.data();
        for bi in 0..b {
            for rem in 0..hw {
                let base = bi * k * hw + rem;
                let mut s = 0.0f64;
                for c in 0..k {
                    let v = td[base + c * hw].as_f64();
                    if !(0.0..=1.0 + 1e-6).contains(&v) {
                        return Err(Error::invalid(
                            "soft_target_ce",
                            format!("teacher probability {v} outside [0, 1]"),
                        ));
                    }
                    s += v;
                }
                if (s - 1.0).abs() > 1e-4 {
                    return Err(Error::invalid(
                        "soft_target_ce",
                        format!("teacher probabilities sum to {s}, expected 1 within 1e-4"),
                    ));
                }
            }
        }
    }
    if selected.is_empty() {
        return Ok(Tensor::scalar(E::zero()));
    }

    let mut total = E::zero();
    {
        let sd = student_logits.data();
        let td = teacher_probs.data();
        for &p in &selected {
            let (bi, rem) = (p as usize / hw, p as usize % hw);
            let base = bi * k * hw + rem;
            let lse = pixel_lse(&sd, bi, rem, k, hw);
            for c in 0..k {
                total += td[base + c * hw] * (lse - sd[base + c * hw]);
            }
        }
    }
    let n = selected.len();
    let loss = total / E::from_f64(n as f64);

    let rg = student_logits.requires_grad();
    let out = Tensor::output(vec![loss], vec![], rg);
    if rg {
        let sl = student_logits.clone();
        let tp = teacher_probs.clone();
        tape.record(&[student_logits], &out, Box::new(move |gout, sink| {
            let g = gout[0] / E::from_f64(n as f64);
            let sd = sl.data();
            let td = tp.data();
            let buf = sink.buf(&sl);
            for &p in &selected {
                let (bi, rem) = (p as usize / hw, p as usize % hw);
                let base = bi * k * hw + rem;
                let lse = pixel_lse(&sd, bi, rem, k, hw);
                let mut tsum = E::zero();
                for c in 0..k {
                    tsum += td[base + c * hw];
                }
                for c in 0..k {
                    let soft = (sd[base + c * hw] - lse).exp();
                    buf[base + c * hw] += (tsum * soft - td[base + c * hw]) * g;
                }
            }
        }));
    }
    Ok(out)
}

fn check_label_shapes<E: Elem>(op: &'static str, logits: &Tensor<E>, labels: &LabelMap) -> Result<(usize, usize, usize, usize)> {
    let (b, k, h, w) = dims4(op, logits)?;
    if labels.batch != b || labels.height != h || labels.width != w {
        return Err(Error::shape(
            op,
            format!(
                "labels [{}, {}, {}] do not match logits [{b}, {k}, {h}, {w}]",
                labels.batch, labels.height, labels.width
            ),
        ));
    }
    Ok((b, k, h, w))
}

fn check_labels_in_range(op: &'static str, labels: &LabelMap, k: usize, ignore: u8) -> Result<()> {
    for &l in &labels.data {
        if l != ignore && l as usize >= k {
            return Err(Error::invalid(
                op,
                format!("label {l} out of range for {k} classes (ignore value is {ignore})"),
            ));
        }
    }
    Ok(())
}

// ── Public losses ───────────────────────────────────────────────────────────

/// Mean per-pixel cross-entropy of `logits [B,K,H,W]` against hard labels,
/// skipping ignore pixels. With OHEM enabled, only pixels whose true-class
/// probability is below the keep threshold contribute, backfilled with the
/// hardest remaining pixels up to `ceil(min_kept_fraction · valid)`. An input
/// with no contributing pixels yields a constant zero.
pub fn cross_entropy<E: Elem>(
    tape: &Tape<E>,
    logits: &Tensor<E>,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<Tensor<E>> {
    cfg.validate()?;
    let (_b, k, h, w) = check_label_shapes("cross_entropy", logits, labels)?;
    check_labels_in_range("cross_entropy", labels, k, cfg.ignore_index)?;
    let hw = h * w;

    // Valid pixels in flat order, with true-class probabilities if OHEM needs
    // to rank them.
    let mut valid: Vec<u32> = Vec::new();
    for (p, &l) in labels.data.iter().enumerate() {
        if l != cfg.ignore_index {
            valid.push(p as u32);
        }
    }

    let selected = match &cfg.ohem {
        None => valid,
        Some(ohem) => {
            let ld = logits.data();
            let p_true: Vec<f64> = valid
                .iter()
                .map(|&p| {
                    let (bi, rem) = (p as usize / hw, p as usize % hw);
                    let lab = labels.data[p as usize] as usize;
                    let lse = pixel_lse(&ld, bi, rem, k, hw);
                    (ld[bi * k * hw + lab * hw + rem] - lse).exp().as_f64()
                })
                .collect();
            drop(ld);
            let min_kept =
                (ohem.min_kept_fraction * valid.len() as f64).ceil() as usize;
            let mut hard: Vec<usize> = Vec::new(); // positions into `valid`
            let mut easy: Vec<usize> = Vec::new();
            for (i, &pt) in p_true.iter().enumerate() {
                if pt < ohem.keep_threshold {
                    hard.push(i);
                } else {
                    easy.push(i);
                }
            }
            if hard.len() < min_kept {
                // Backfill with the most uncertain of the excluded pixels;
                // ties break on pixel order so the selection is deterministic.
                easy.sort_by(|&a, &b| {
                    p_true[a].partial_cmp(&p_true[b]).unwrap().then(a.cmp(&b))
                });
                let need = (min_kept - hard.len()).min(easy.len());
                hard.extend_from_slice(&easy[..need]);
                hard.sort_unstable();
            }
            hard.into_iter().map(|i| valid[i]).collect()
        }
    };

    ce_over_pixels(tape, logits, labels, selected)
}

/// Distillation loss: mean over every pixel of the cross-entropy between the
/// detached teacher distribution and the student's softmax.
pub fn soft_target_ce<E: Elem>(
    tape: &Tape<E>,
    student_logits: &Tensor<E>,
    teacher_probs: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (b, _k, h, w) = dims4("soft_target_ce", student_logits)?;
    let all: Vec<u32> = (0..(b * h * w) as u32).collect();
    soft_ce_over_pixels(tape, student_logits, teacher_probs, all)
}

/// Mean binary cross-entropy of probabilities `p` against targets `y` in
/// `[0, 1]` (hard rasterized borders or a teacher's soft boundary scores).
/// `p` is clamped to `[1e-7, 1−1e-7]` before the logs; clamped elements get a
/// zero gradient.
pub fn binary_ce<E: Elem>(tape: &Tape<E>, p: &Tensor<E>, y: &Tensor<E>) -> Result<Tensor<E>> {
    if p.shape() != y.shape() {
        return Err(Error::shape(
            "binary_ce",
            format!("prediction shape {:?} does not match target shape {:?}", p.shape(), y.shape()),
        ));
    }
    if y.requires_grad() {
        return Err(Error::invalid(
            "binary_ce",
            "targets must be detached (ground-truth boundaries or a detached teacher)",
        ));
    }
    if p.numel() == 0 {
        return Err(Error::shape("binary_ce", "empty prediction"));
    }
    let lo = E::from_f64(1e-7);
    let hi = E::one() - lo;

    let mut total = E::zero();
    {
        let pd = p.data();
        let yd = y.data();
        for (&pv, &yv) in pd.iter().zip(yd.iter()) {
            let yf = yv.as_f64();
            if !(0.0..=1.0).contains(&yf) {
                return Err(Error::invalid(
                    "binary_ce",
                    format!("target value {yf} outside [0, 1]"),
                ));
            }
            let pc = if pv < lo {
                lo
            } else if pv > hi {
                hi
            } else {
                pv
            };
            total += -(yv * pc.ln() + (E::one() - yv) * (E::one() - pc).ln());
        }
    }
    let n = p.numel();
    let loss = total / E::from_f64(n as f64);

    let rg = p.requires_grad();
    let out = Tensor::output(vec![loss], vec![], rg);
    if rg {
        let ph = p.clone();
        let yh = y.clone();
        tape.record(&[p], &out, Box::new(move |gout, sink| {
            let g = gout[0] / E::from_f64(n as f64);
            let pd = ph.data();
            let yd = yh.data();
            let buf = sink.buf(&ph);
            for (i, (&pv, &yv)) in pd.iter().zip(yd.iter()).enumerate() {
                if pv < lo || pv > hi {
                    continue; // saturated by the clamp
                }
                buf[i] += (pv - yv) / (pv * (E::one() - pv)) * g;
            }
        }));
    }
    Ok(out)
}

/// Ground-truth cross-entropy restricted to mask-valid, non-ignored pixels.
/// No OHEM here: the mask itself is the mining strategy. An empty selection
/// yields a constant zero.
pub fn masked_ce<E: Elem>(
    tape: &Tape<E>,
    logits: &Tensor<E>,
    labels: &LabelMap,
    mask: &BoundaryMask,
    cfg: &LossConfig,
) -> Result<Tensor<E>> {
    cfg.validate()?;
    let (b, k, h, w) = check_label_shapes("masked_ce", logits, labels)?;
    check_labels_in_range("masked_ce", labels, k, cfg.ignore_index)?;
    check_mask_shape("masked_ce", mask, b, h, w)?;
    let selected: Vec<u32> = (0..labels.pixels() as u32)
        .filter(|&p| mask.valid[p as usize] && labels.data[p as usize] != cfg.ignore_index)
        .collect();
    ce_over_pixels(tape, logits, labels, selected)
}

/// Distillation loss restricted to mask-valid pixels. The teacher stays
/// unmasked — the mask selects which student pixels are scored, the target at
/// those pixels is the teacher's full distribution.
pub fn masked_kd<E: Elem>(
    tape: &Tape<E>,
    student_logits: &Tensor<E>,
    teacher_probs: &Tensor<E>,
    mask: &BoundaryMask,
) -> Result<Tensor<E>> {
    let (b, _k, h, w) = dims4("masked_kd", student_logits)?;
    check_mask_shape("masked_kd", mask, b, h, w)?;
    let selected: Vec<u32> =
        (0..(b * h * w) as u32).filter(|&p| mask.valid[p as usize]).collect();
    soft_ce_over_pixels(tape, student_logits, teacher_probs, selected)
}

fn check_mask_shape(op: &'static str, mask: &BoundaryMask, b: usize, h: usize, w: usize) -> Result<()> {
    if mask.batch != b || mask.height != h || mask.width != w {
        return Err(Error::shape(
            op,
            format!(
                "mask [{}, {}, {}] does not match logits [{b}, _, {h}, {w}]",
                mask.batch, mask.height, mask.width
            ),
        ));
    }
    Ok(())
}

/// Rasterizes ground-truth boundaries: a pixel is boundary (1) iff some pixel
/// with a *different, non-ignored* label lies within Euclidean distance
/// `radius`. Ignore-labeled pixels are never boundary themselves and never
/// make their neighbors boundary. Output is a constant `[B,1,H,W]` 0/1 map.
pub fn boundary_gt<E: Elem>(labels: &LabelMap, radius: usize, ignore_index: u8) -> Result<Tensor<E>> {
    if radius == 0 {
        return Err(Error::invalid("boundary_gt", "radius must be at least 1"));
    }
    let (b, h, w) = (labels.batch, labels.height, labels.width);
    let r = radius as i64;
    // Neighbor offsets within the disk, nearest first so the common case
    // (adjacent label change) exits after one or two probes.
    let mut offsets: Vec<(i64, i64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dy, dx) != (0, 0) && dy * dy + dx * dx <= r * r {
                offsets.push((dy, dx));
            }
        }
    }
    offsets.sort_by_key(|&(dy, dx)| dy * dy + dx * dx);

    let mut out = vec![E::zero(); b * h * w];
    for bi in 0..b {
        let plane = &labels.data[bi * h * w..(bi + 1) * h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let own = plane[(y * w as i64 + x) as usize];
                if own == ignore_index {
                    continue;
                }
                for &(dy, dx) in &offsets {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let other = plane[(ny * w as i64 + nx) as usize];
                    if other != own && other != ignore_index {
                        out[bi * h * w + (y * w as i64 + x) as usize] = E::one();
                        break;
                    }
                }
            }
        }
    }
    Tensor::from_vec(out, &[b, 1, h, w])
}

// ── Per-width combination ───────────────────────────────────────────────────

/// Scalar loss terms of one width, before weighting. `boundary` and `guided`
/// are absent when the model trains without its boundary head.
pub struct WidthTerms<E: Elem> {
    pub width: f64,
    pub seg: Tensor<E>,
    pub boundary: Option<Tensor<E>>,
    pub guided: Option<Tensor<E>>,
}

/// Logged view of one width's losses (raw, unweighted components; `total`
/// applies the λ weights).
#[derive(Clone, Debug, PartialEq)]
pub struct WidthBreakdown {
    pub width: f64,
    pub seg: f64,
    pub boundary: f64,
    pub guided: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub per_width: Vec<WidthBreakdown>,
    pub total: f64,
}

/// Combines per-width terms into the single training scalar
/// `Σ_w (seg_w + λ₁·boundary_w + λ₂·guided_w)` plus a logging breakdown.
/// Zero-weighted or absent terms are skipped outright, so they contribute
/// neither value nor gradient.
pub fn combine_losses<E: Elem>(
    tape: &Tape<E>,
    terms: &[WidthTerms<E>],
    cfg: &LossConfig,
) -> Result<(Tensor<E>, LossBreakdown)> {
    cfg.validate()?;
    if terms.is_empty() {
        return Err(Error::invalid("combine_losses", "no per-width terms supplied"));
    }
    let mut total: Option<Tensor<E>> = None;
    let mut per_width = Vec::with_capacity(terms.len());
    for t in terms {
        let seg = t.seg.item()?.as_f64();
        let mut width_total = t.seg.clone();
        let mut bval = 0.0;
        if let Some(bt) = &t.boundary {
            bval = bt.item()?.as_f64();
            if cfg.lambda1 > 0.0 {
                width_total = add(tape, &width_total, &scale(tape, bt, cfg.lambda1))?;
            }
        }
        let mut gval = 0.0;
        if let Some(gt) = &t.guided {
            gval = gt.item()?.as_f64();
            if cfg.lambda2 > 0.0 {
                width_total = add(tape, &width_total, &scale(tape, gt, cfg.lambda2))?;
            }
        }
        per_width.push(WidthBreakdown {
            width: t.width,
            seg,
            boundary: bval,
            guided: gval,
            total: seg + cfg.lambda1 * bval + cfg.lambda2 * gval,
        });
        total = Some(match total {
            None => width_total,
            Some(acc) => add(tape, &acc, &width_total)?,
        });
    }
    let total = total.unwrap();
    let breakdown = LossBreakdown { total: total.item()?.as_f64(), per_width };
    Ok((total, breakdown))
}

#[cfg(test)]
#[path = "losses_tests.rs"]
mod losses_tests;
