//! Evaluation: confusion-matrix mIoU, exact Euclidean distance transforms,
//! error-distance histograms, and cross-width difference maps.
//!
//! All metrics are integer accumulations in deterministic order, so shard
//! merges commute and repeated runs agree bitwise.

use crate::error::{Error, Result};
use crate::losses::{boundary_gt, LabelMap};
use crate::tensor::{Elem, Tensor};

// ── Predictions ─────────────────────────────────────────────────────────────

/// Collapses `[B, K, H, W]` scores to per-pixel class ids. Ties break toward
/// the lower class id, making predictions deterministic.
pub fn argmax_labels<E: Elem>(scores: &Tensor<E>) -> Result<LabelMap> {
    let shape = scores.shape();
    if shape.len() != 4 {
        return Err(Error::shape("argmax_labels", format!("expected [B, K, H, W], got {shape:?}")));
    }
    let (b, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if k == 0 || k > 255 {
        return Err(Error::invalid("argmax_labels", format!("{k} channels do not fit u8 labels")));
    }
    let data = scores.data();
    let hw = h * w;
    let mut labels = vec![0u8; b * hw];
    for bi in 0..b {
        for px in 0..hw {
            let mut best = 0usize;
            let mut best_v = data[(bi * k) * hw + px];
            for c in 1..k {
                let v = data[(bi * k + c) * hw + px];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            labels[bi * hw + px] = best as u8;
        }
    }
    LabelMap::new(labels, b, h, w)
}

// ── Confusion matrix and mIoU ───────────────────────────────────────────────

/// K×K counts, entry `(g, p)` = pixels of ground-truth class `g` predicted as
/// `p`. Merging shards is entrywise addition, so evaluation order is
/// irrelevant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("ConfusionMatrix", "need at least 2 classes"));
        }
        Ok(ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    /// Total evaluated (non-ignored) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Total mispredicted pixels.
    pub fn errors(&self) -> u64 {
        let mut sum = 0;
        for g in 0..self.num_classes {
            for p in 0..self.num_classes {
                if g != p {
                    sum += self.count(g, p);
                }
            }
        }
        sum
    }

    /// Accumulates one batch of predictions. Ground-truth pixels equal to
    /// `ignore_index` are skipped; any other out-of-range id is an error.
    pub fn update(&mut self, pred: &LabelMap, gt: &LabelMap, ignore_index: u8) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(
                "update_confusion",
                format!("prediction dims {:?} vs ground truth {:?}", pred.dims(), gt.dims()),
            ));
        }
        let k = self.num_classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == ignore_index {
                continue;
            }
            if (g as usize) >= k || (p as usize) >= k {
                return Err(Error::invalid(
                    "update_confusion",
                    format!("label pair (gt {g}, pred {p}) out of range for {k} classes"),
                ));
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::shape(
                "merge_confusion",
                format!("{} vs {} classes", self.num_classes, other.num_classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Mean intersection-over-union. `per_class[k]` is `None` for classes absent
/// from both prediction and ground truth; those are excluded from the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<MiouReport> {
    let k = cm.num_classes();
    let mut per_class = Vec::with_capacity(k);
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        let tp = cm.count(c, c);
        let row: u64 = (0..k).map(|p| cm.count(c, p)).sum();
        let col: u64 = (0..k).map(|g| cm.count(g, c)).sum();
        let denom = row + col - tp;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::invalid("miou", "no class present in prediction or ground truth"));
    }
    Ok(MiouReport { miou: sum / present as f64, per_class })
}

// ── Distance transform ──────────────────────────────────────────────────────

/// Exact squared Euclidean distance (in pixels²) from every pixel to the
/// nearest marked pixel. Two passes: per-column vertical offsets, then a
/// per-row minimization over columns — all in integer arithmetic, so the
/// result is exact.
pub fn distance_transform_sq(boundary: &[u8], h: usize, w: usize) -> Result<Vec<u64>> {
    if boundary.len() != h * w || h == 0 || w == 0 {
        return Err(Error::shape(
            "distance_transform",
            format!("map of {} values does not fill {h}×{w}", boundary.len()),
        ));
    }
    if boundary.iter().any(|&v| v > 1) {
        return Err(Error::invalid("distance_transform", "boundary map must be {0, 1} valued"));
    }
    if !boundary.contains(&1) {
        return Err(Error::invalid("distance_transform", "boundary map has no marked pixel"));
    }

    // Vertical pass: g[y][x] = |y − y'| for the nearest marked pixel in
    // column x (or `none`).
    const NONE: u64 = u64::MAX;
    let mut g = vec![NONE; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if boundary[y * w + x] == 1 {
                last = Some(y);
            }
            if let Some(ly) = last {
                g[y * w + x] = (y - ly) as u64;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if boundary[y * w + x] == 1 {
                last = Some(y);
            }
            if let Some(ly) = last {
                g[y * w + x] = g[y * w + x].min((ly - y) as u64);
            }
        }
    }

    // Horizontal pass: combine each column's vertical offset with the
    // horizontal distance to it.
    let mut out = vec![0u64; h * w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        for x in 0..w {
            let mut best = NONE;
            for (i, &gv) in row.iter().enumerate() {
                if gv == NONE {
                    continue;
                }
                let dx = x.abs_diff(i) as u64;
                let d = dx * dx + gv * gv;
                if d < best {
                    best = d;
                }
            }
            out[y * w + x] = best;
        }
    }
    Ok(out)
}

/// Euclidean distance map (the square root of [`distance_transform_sq`]).
pub fn distance_transform(boundary: &[u8], h: usize, w: usize) -> Result<Vec<f64>> {
    Ok(distance_transform_sq(boundary, h, w)?.into_iter().map(|d| (d as f64).sqrt()).collect())
}

// ── Error-distance histogram ────────────────────────────────────────────────

/// Default bin edges in pixels; the last bin is open-ended. The fine bins
/// resolve the near-boundary band where segmentation errors concentrate.
pub const DEFAULT_BIN_EDGES: [f64; 7] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0];

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceHistogram {
    /// Lower edges; bin `i` covers `[edges[i], edges[i+1])`, the last
    /// `[edges.last(), ∞)`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl DistanceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bins every mispredicted, non-ignored pixel by its exact distance to the
/// ground truth's own boundary band (radius 1). Distances are compared
/// squared against squared edges, so binning is exact.
pub fn error_distance_histogram(
    pred: &LabelMap,
    gt: &LabelMap,
    ignore_index: u8,
    edges: &[f64],
) -> Result<DistanceHistogram> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "error_distance_histogram",
            format!("prediction dims {:?} vs ground truth {:?}", pred.dims(), gt.dims()),
        ));
    }
    if edges.is_empty() || edges[0] != 0.0 {
        return Err(Error::invalid(
            "error_distance_histogram",
            "bin edges must start at 0 so every error pixel is counted",
        ));
    }
    if edges.windows(2).any(|p| !(p[1] > p[0])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid(
            "error_distance_histogram",
            "bin edges must be finite and strictly increasing",
        ));
    }
    let (b, h, w) = gt.dims();
    let edges_sq: Vec<f64> = edges.iter().map(|e| e * e).collect();
    let mut counts = vec![0u64; edges.len()];

    // The band is derived once for the whole batch; the transform runs per
    // image because distances must not leak across images.
    let band_t = boundary_gt::<f32>(gt, 1, ignore_index)?;
    let band = band_t.data();
    for bi in 0..b {
        let plane: Vec<u8> =
            band[bi * h * w..(bi + 1) * h * w].iter().map(|&v| u8::from(v != 0.0)).collect();
        let dist_sq = distance_transform_sq(&plane, h, w)?;
        for px in 0..h * w {
            let g = gt.data()[bi * h * w + px];
            let p = pred.data()[bi * h * w + px];
            if g == ignore_index || g == p {
                continue;
            }
            let d = dist_sq[px] as f64;
            let bin = match edges_sq.iter().rposition(|&e| e <= d) {
                Some(i) => i,
                None => unreachable!("edge 0 covers every distance"),
            };
            counts[bin] += 1;
        }
    }
    Ok(DistanceHistogram { edges: edges.to_vec(), counts })
}

// ── Difference maps ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffPixel {
    Agree,
    /// The two predictions differ; carries the ground-truth class id (or the
    /// ignore value) for rendering.
    Disagree(u8),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffMap {
    pub pixels: Vec<DiffPixel>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of all pixels where the predictions differ.
    pub disagreement: f64,
}

/// Compares two widths' predictions pixelwise, annotating disagreements with
/// the ground-truth class.
pub fn diff_map(pred_a: &LabelMap, pred_b: &LabelMap, gt: &LabelMap) -> Result<DiffMap> {
    if pred_a.dims() != pred_b.dims() || pred_a.dims() != gt.dims() {
        return Err(Error::shape(
            "diff_map",
            format!(
                "dims differ: {:?} vs {:?} vs {:?}",
                pred_a.dims(),
                pred_b.dims(),
                gt.dims()
            ),
        ));
    }
    let (b, h, w) = gt.dims();
    let mut pixels = Vec::with_capacity(b * h * w);
    let mut disagreements = 0u64;
    for i in 0..b * h * w {
        if pred_a.data()[i] == pred_b.data()[i] {
            pixels.push(DiffPixel::Agree);
        } else {
            pixels.push(DiffPixel::Disagree(gt.data()[i]));
            disagreements += 1;
        }
    }
    Ok(DiffMap {
        pixels,
        batch: b,
        height: h,
        width: w,
        disagreement: disagreements as f64 / (b * h * w) as f64,
    })
}

// ── Report formatting ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub width: f64,
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
    pub flops: u64,
    pub params: u64,
}

/// Tab-separated per-width metrics: a header, then one row per width.
/// Absent classes print as `na`.
pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let classes = rows.first().map_or(0, |r| r.per_class.len());
    let mut out = String::from("width\tmiou");
    for c in 0..classes {
        out.push_str(&format!("\tiou_{c}"));
    }
    out.push_str("\tflops\tparams\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.6}", r.width, r.miou));
        for c in &r.per_class {
            match c {
                Some(v) => out.push_str(&format!("\t{v:.6}")),
                None => out.push_str("\tna"),
            }
        }
        out.push_str(&format!("\t{}\t{}\n", r.flops, r.params));
    }
    out
}

/// Tab-separated `(bin_low, bin_high, count)` rows; the last high edge
/// prints as `inf`.
pub fn histogram_rows(hist: &DistanceHistogram) -> String {
    let mut out = String::from("bin_low\tbin_high\tcount\n");
    for (i, &count) in hist.counts.iter().enumerate() {
        let high = match hist.edges.get(i + 1) {
            Some(e) => format!("{e}"),
            None => "inf".to_string(),
        };
        out.push_str(&format!("{}\t{high}\t{count}\n", hist.edges[i]));
    }
    out
}

#[cfg(test)]
#[path = "eval_tests.rs"]
mod eval_tests;
