//! Synthetic segmentation data: procedural shape scenes, the training
//! augmentation pipeline, and bit-exact sample files.
//!
//! A sample is a colored scene of filled rectangles, disks, and triangles on
//! a dark background. Every shape class has a characteristic geometry
//! (`kind = (class − 1) mod 3`) and a characteristic palette color, jittered
//! per shape, with Gaussian pixel noise on top — enough signal that a small
//! network can learn the classes, enough noise that it has to.
//!
//! Generation is pure in `(seed, index)`: the RNG is keyed by the seed and
//! uses the sample index as its stream, so any sample can be regenerated in
//! isolation and datasets never need to be stored.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::{boundary_gt, LabelMap};
use crate::slim::seeded_rng;
use crate::tensor::{Elem, Tensor};

/// Label value for pixels without a ground-truth class (crop padding).
pub const IGNORE: u8 = 255;

/// RNG streams `STREAM_SAMPLE_BASE + index` belong to sample generation;
/// small stream ids are reserved for other purposes (model init, batching).
pub const STREAM_SAMPLE_BASE: u64 = 1 << 32;

// ── Types ───────────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Class count including background class 0.
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise_std: f64,
    /// Radius used to derive each sample's boundary map.
    pub boundary_radius: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 5,
            height: 64,
            width: 64,
            shapes_min: 2,
            shapes_max: 5,
            noise_std: 0.05,
            boundary_radius: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > IGNORE as usize {
            return Err(Error::invalid("SynthConfig", "num_classes must be in [2, 255)"));
        }
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::invalid(
                "SynthConfig",
                format!("canvas {}×{} must be nonempty and divisible by 16", self.height, self.width),
            ));
        }
        if self.shapes_min > self.shapes_max {
            return Err(Error::invalid("SynthConfig", "shapes_min must not exceed shapes_max"));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::invalid("SynthConfig", "noise_std must be finite and nonnegative"));
        }
        if self.boundary_radius == 0 {
            return Err(Error::invalid("SynthConfig", "boundary_radius must be at least 1"));
        }
        Ok(())
    }
}

/// One image with pixel labels and the derived boundary band. `image` is
/// `[3, H, W]` row-major in `[0, 1]`; `labels` and `boundary` are `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSample {
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    pub boundary: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl SegmentationSample {
    fn from_parts(image: Vec<f32>, labels: Vec<u8>, h: usize, w: usize, radius: usize) -> Result<Self> {
        let boundary = boundary_of(&labels, h, w, radius)?;
        Ok(SegmentationSample { image, labels, boundary, height: h, width: w })
    }
}

/// Recomputes the `{0, 1}` boundary band for a label map.
pub fn boundary_of(labels: &[u8], h: usize, w: usize, radius: usize) -> Result<Vec<u8>> {
    let map = LabelMap::new(labels.to_vec(), 1, h, w)?;
    let t = boundary_gt::<f32>(&map, radius, IGNORE)?;
    let band = t.data().iter().map(|&v| u8::from(v != 0.0)).collect();
    Ok(band)
}

// ── Generation ──────────────────────────────────────────────────────────────

enum Shape {
    /// Float bounds; a pixel belongs if its center lies in `[x0, x1) × [y0, y1)`.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    /// Counter-clockwise vertices; membership by half-plane sign tests.
    Tri { v: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            Shape::Rect { x0, y0, x1, y1 } => px >= *x0 && px < *x1 && py >= *y0 && py < *y1,
            Shape::Disk { cx, cy, r } => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Tri { v } => {
                let edge = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
                };
                edge(v[0], v[1]) >= 0.0 && edge(v[1], v[2]) >= 0.0 && edge(v[2], v[0]) >= 0.0
            }
        }
    }
}

/// Fixed palette: background is near-black; each foreground class gets an
/// evenly spaced hue.
pub fn class_color(class: usize, num_classes: usize) -> [f64; 3] {
    if class == 0 {
        return [0.16, 0.16, 0.18];
    }
    let hue = (class - 1) as f64 / (num_classes - 1).max(1) as f64;
    hsv_to_rgb(hue, 0.65, 0.8)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn jittered(base: [f64; 3], rng: &mut ChaCha20Rng, sigma: f64) -> [f64; 3] {
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut out = [0.0; 3];
    for (o, b) in out.iter_mut().zip(base) {
        *o = (b + normal.sample(rng)).clamp(0.05, 0.95);
    }
    out
}

/// Renders sample `index` of the dataset described by `cfg`. Pure in
/// `(cfg.seed, index)`.
pub fn synth_generate(cfg: &SynthConfig, index: u64) -> Result<SegmentationSample> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, STREAM_SAMPLE_BASE + index);
    let (h, w, k) = (cfg.height, cfg.width, cfg.num_classes);
    let m = h.min(w) as f64;

    // Classes first: shuffle the foreground classes so scenes use distinct
    // ones while enough are available, then allow repeats.
    let n_shapes = rng.gen_range(cfg.shapes_min..=cfg.shapes_max);
    let mut pool: Vec<u8> = (1..k as u8).collect();
    for i in (1..pool.len()).rev() {
        pool.swap(i, rng.gen_range(0..=i));
    }
    let classes: Vec<u8> = (0..n_shapes)
        .map(|i| if i < pool.len() { pool[i] } else { pool[rng.gen_range(0..pool.len())] })
        .collect();

    // Geometry and color per shape, in draw order. Later shapes occlude
    // earlier ones.
    let mut shapes = Vec::with_capacity(n_shapes);
    for &class in &classes {
        let shape = match (class - 1) % 3 {
            0 => {
                let cx = rng.gen_range(0.0..w as f64);
                let cy = rng.gen_range(0.0..h as f64);
                let hx = rng.gen_range(m / 10.0..m / 4.0);
                let hy = rng.gen_range(m / 10.0..m / 4.0);
                Shape::Rect { x0: cx - hx, y0: cy - hy, x1: cx + hx, y1: cy + hy }
            }
            1 => Shape::Disk {
                cx: rng.gen_range(0.0..w as f64),
                cy: rng.gen_range(0.0..h as f64),
                r: rng.gen_range(m / 8.0..m / 4.0),
            },
            _ => {
                let cx = rng.gen_range(0.0..w as f64);
                let cy = rng.gen_range(0.0..h as f64);
                let base = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut v = [(0.0, 0.0); 3];
                for (i, vert) in v.iter_mut().enumerate() {
                    let angle = base
                        + i as f64 * std::f64::consts::TAU / 3.0
                        + rng.gen_range(-0.5..0.5);
                    let r = rng.gen_range(m / 7.0..m / 3.0);
                    *vert = (cx + r * angle.cos(), cy + r * angle.sin());
                }
                // Enforce counter-clockwise orientation for the sign tests.
                let area2 = (v[1].0 - v[0].0) * (v[2].1 - v[0].1)
                    - (v[1].1 - v[0].1) * (v[2].0 - v[0].0);
                if area2 < 0.0 {
                    v.swap(1, 2);
                }
                Shape::Tri { v }
            }
        };
        let color = jittered(class_color(class as usize, k), &mut rng, 0.08);
        shapes.push((class, shape, color));
    }
    let bg = jittered(class_color(0, k), &mut rng, 0.03);

    // Rasterize: topmost shape wins at each pixel center.
    let mut labels = vec![0u8; h * w];
    let mut image = vec![0f32; 3 * h * w];
    for py in 0..h {
        for px in 0..w {
            let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut color = &bg;
            for (class, shape, shade) in shapes.iter().rev() {
                if shape.contains(fx, fy) {
                    labels[py * w + px] = *class;
                    color = shade;
                    break;
                }
            }
            for (ch, &v) in color.iter().enumerate() {
                image[(ch * h + py) * w + px] = v as f32;
            }
        }
    }

    // Pixel noise, drawn after all structural randomness.
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).unwrap();
        for v in image.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }

    SegmentationSample::from_parts(image, labels, h, w, cfg.boundary_radius)
}

// ── Augmentation ────────────────────────────────────────────────────────────

/// One draw of the augmentation pipeline: horizontal flip, then resize by
/// `scale`, then an `H × W` crop at `(crop_y, crop_x)` of the scaled canvas.
/// Crop regions beyond the scaled canvas read as ignore-label / black.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub scale: f64,
    pub crop_y: usize,
    pub crop_x: usize,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams { flip: false, scale: 1.0, crop_y: 0, crop_x: 0 }
    }

    /// Draws parameters the way training does: fair flip, scale uniform in
    /// `[0.5, 2.0]`, crop origin uniform over positions that keep the window
    /// inside the scaled canvas (origin 0 when the canvas is smaller).
    pub fn draw(rng: &mut ChaCha20Rng, height: usize, width: usize) -> Self {
        let flip = rng.gen_bool(0.5);
        let scale = rng.gen_range(0.5..=2.0);
        let (sh, sw) = scaled_size(height, width, scale);
        let crop_y = if sh > height { rng.gen_range(0..=sh - height) } else { 0 };
        let crop_x = if sw > width { rng.gen_range(0..=sw - width) } else { 0 };
        AugmentParams { flip, scale, crop_y, crop_x }
    }
}

fn scaled_size(h: usize, w: usize, scale: f64) -> (usize, usize) {
    (((h as f64 * scale).round() as usize).max(1), ((w as f64 * scale).round() as usize).max(1))
}

/// Half-pixel source mapping for one axis: output index `i` reads around
/// source coordinate `(i + 0.5)·(n_in/n_out) − 0.5`, clamped to the edges.
/// Images interpolate between `lo` and `hi` with weight `frac`; labels take
/// the nearer one. Sharing this map is what keeps image and label geometry
/// aligned under every scale.
fn half_pixel_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Applies one augmentation draw. The output keeps the input's canvas size;
/// the boundary band is recomputed from the transformed labels.
pub fn augment(
    sample: &SegmentationSample,
    params: &AugmentParams,
    boundary_radius: usize,
) -> Result<SegmentationSample> {
    if !(0.5..=2.0).contains(&params.scale) {
        return Err(Error::invalid(
            "augment",
            format!("scale {} outside the supported range [0.5, 2.0]", params.scale),
        ));
    }
    let (h, w) = (sample.height, sample.width);

    // Flip (x-axis reversal) on the original canvas.
    let mut image = sample.image.clone();
    let mut labels = sample.labels.clone();
    if params.flip {
        for ch in 0..3 {
            for y in 0..h {
                image[(ch * h + y) * w..(ch * h + y + 1) * w].reverse();
            }
        }
        for y in 0..h {
            labels[y * w..(y + 1) * w].reverse();
        }
    }

    // Resize: bilinear for the image, nearest for the labels, one shared map.
    let (sh, sw) = scaled_size(h, w, params.scale);
    let ymap = half_pixel_axis(h, sh);
    let xmap = half_pixel_axis(w, sw);
    let mut scaled_img = vec![0f32; 3 * sh * sw];
    let mut scaled_lab = vec![0u8; sh * sw];
    for oy in 0..sh {
        let (y0, y1, fy) = ymap[oy];
        for ox in 0..sw {
            let (x0, x1, fx) = xmap[ox];
            for ch in 0..3 {
                let at = |yy: usize, xx: usize| image[(ch * h + yy) * w + xx] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                scaled_img[(ch * sh + oy) * sw + ox] = (top * (1.0 - fy) + bot * fy) as f32;
            }
            let ny = if fy < 0.5 { y0 } else { y1 };
            let nx = if fx < 0.5 { x0 } else { x1 };
            scaled_lab[oy * sw + ox] = labels[ny * w + nx];
        }
    }

    // Crop back to the canvas size, padding past the scaled extent.
    let mut out_img = vec![0f32; 3 * h * w];
    let mut out_lab = vec![IGNORE; h * w];
    for oy in 0..h {
        let sy = params.crop_y + oy;
        if sy >= sh {
            continue;
        }
        for ox in 0..w {
            let sx = params.crop_x + ox;
            if sx >= sw {
                continue;
            }
            out_lab[oy * w + ox] = scaled_lab[sy * sw + sx];
            for ch in 0..3 {
                out_img[(ch * h + oy) * w + ox] = scaled_img[(ch * sh + sy) * sw + sx];
            }
        }
    }

    SegmentationSample::from_parts(out_img, out_lab, h, w, boundary_radius)
}

// ── Batching ────────────────────────────────────────────────────────────────

fn check_same_canvas(samples: &[SegmentationSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("batch", "cannot batch zero samples"))?;
    let (h, w) = (first.height, first.width);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::shape(
                "batch",
                format!("mixed canvas sizes: {}×{} vs {h}×{w}", s.height, s.width),
            ));
        }
    }
    Ok((h, w))
}

/// Stacks sample images into a `[B, 3, H, W]` input tensor.
pub fn batch_images<E: Elem>(samples: &[SegmentationSample]) -> Result<Tensor<E>> {
    let (h, w) = check_same_canvas(samples)?;
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        data.extend(s.image.iter().map(|&v| E::from_f64(v as f64)));
    }
    Tensor::from_vec(data, &[samples.len(), 3, h, w])
}

/// Stacks sample labels into a `[B, H, W]` label map.
pub fn batch_labels(samples: &[SegmentationSample]) -> Result<LabelMap> {
    let (h, w) = check_same_canvas(samples)?;
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        data.extend_from_slice(&s.labels);
    }
    LabelMap::new(data, samples.len(), h, w)
}

/// Stacks sample boundary bands into a `[B, 1, H, W]` target tensor.
pub fn batch_boundaries<E: Elem>(samples: &[SegmentationSample]) -> Result<Tensor<E>> {
    let (h, w) = check_same_canvas(samples)?;
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        data.extend(s.boundary.iter().map(|&v| E::from_f64(v as f64)));
    }
    Tensor::from_vec(data, &[samples.len(), 1, h, w])
}

// ── Sample files ("SLSD1") ──────────────────────────────────────────────────

pub const SAMPLE_MAGIC: &[u8; 5] = b"SLSD1";
pub const SAMPLE_VERSION: u32 = 1;

/// Serializes a sample: magic, version, H, W, K (all u32 LE), image as f32
/// little-endian `[3, H, W]`, labels as raw u8 `[H, W]`. The boundary band is
/// derived state and not stored.
pub fn encode_sample(sample: &SegmentationSample, num_classes: usize) -> Vec<u8> {
    let (h, w) = (sample.height, sample.width);
    let mut out = Vec::with_capacity(21 + 13 * h * w);
    out.extend_from_slice(SAMPLE_MAGIC);
    out.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(num_classes as u32).to_le_bytes());
    for &v in &sample.image {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&sample.labels);
    out
}

/// Parses and validates `SLSD1` bytes; returns the sample (boundary
/// recomputed at `boundary_radius`) and the stored class count.
pub fn decode_sample(
    path: &str,
    bytes: &[u8],
    boundary_radius: usize,
) -> Result<(SegmentationSample, usize)> {
    let fail = |detail: String| Error::format(path, detail);
    if bytes.len() < 21 {
        return Err(fail("truncated header".into()));
    }
    if &bytes[..5] != SAMPLE_MAGIC {
        return Err(fail("bad magic, not an SLSD1 file".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(5);
    if version != SAMPLE_VERSION {
        return Err(fail(format!("unsupported sample version {version}")));
    }
    let (h, w, k) = (u32_at(9) as usize, u32_at(13) as usize, u32_at(17) as usize);
    if h == 0 || w == 0 || k < 2 {
        return Err(fail(format!("bad dimensions {h}×{w} with {k} classes")));
    }
    let expect = 21 + 12 * h * w + h * w;
    if bytes.len() != expect {
        return Err(fail(format!("file is {} bytes, dimensions imply {expect}", bytes.len())));
    }
    let mut image = Vec::with_capacity(3 * h * w);
    for chunk in bytes[21..21 + 12 * h * w].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !(0.0..=1.0).contains(&v) {
            return Err(fail(format!("image value {v} outside [0, 1]")));
        }
        image.push(v);
    }
    let labels = bytes[21 + 12 * h * w..].to_vec();
    for &l in &labels {
        if l != IGNORE && l as usize >= k {
            return Err(fail(format!("label {l} out of range for {k} classes")));
        }
    }
    let sample = SegmentationSample::from_parts(image, labels, h, w, boundary_radius)?;
    Ok((sample, k))
}

pub fn save_sample(path: &Path, sample: &SegmentationSample, num_classes: usize) -> Result<()> {
    std::fs::write(path, encode_sample(sample, num_classes))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_sample(path: &Path, boundary_radius: usize) -> Result<(SegmentationSample, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_sample(&path.display().to_string(), &bytes, boundary_radius)
}

// ── Label-map files ("SLSL1") ───────────────────────────────────────────────

pub const LABELS_MAGIC: &[u8; 5] = b"SLSL1";
pub const LABELS_VERSION: u32 = 1;

/// Serializes a bare label map (the inference artifact): magic, version, H,
/// W, K (all u32 LE), then row-major `u8` labels. The same header layout as
/// sample files, minus the image.
pub fn encode_labels(
    labels: &[u8],
    height: usize,
    width: usize,
    num_classes: usize,
) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::shape(
            "encode_labels",
            format!("{} labels for a {height}×{width} map", labels.len()),
        ));
    }
    if num_classes < 2 || num_classes > IGNORE as usize {
        return Err(Error::invalid("encode_labels", "num_classes must be in [2, 255)"));
    }
    for &l in labels {
        if l != IGNORE && l as usize >= num_classes {
            return Err(Error::invalid(
                "encode_labels",
                format!("label {l} out of range for {num_classes} classes"),
            ));
        }
    }
    let mut out = Vec::with_capacity(21 + labels.len());
    out.extend_from_slice(LABELS_MAGIC);
    out.extend_from_slice(&LABELS_VERSION.to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(num_classes as u32).to_le_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

/// Parses and validates `SLSL1` bytes; returns `(labels, height, width,
/// num_classes)`.
pub fn decode_labels(path: &str, bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    let fail = |detail: String| Error::format(path, detail);
    if bytes.len() < 21 {
        return Err(fail("truncated header".into()));
    }
    if &bytes[..5] != LABELS_MAGIC {
        return Err(fail("bad magic, not an SLSL1 file".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(5);
    if version != LABELS_VERSION {
        return Err(fail(format!("unsupported label-map version {version}")));
    }
    let (h, w, k) = (u32_at(9) as usize, u32_at(13) as usize, u32_at(17) as usize);
    if h == 0 || w == 0 || k < 2 || k > IGNORE as usize {
        return Err(fail(format!("bad dimensions {h}×{w} with {k} classes")));
    }
    let expect = 21 + h * w;
    if bytes.len() != expect {
        return Err(fail(format!("file is {} bytes, dimensions imply {expect}", bytes.len())));
    }
    let labels = bytes[21..].to_vec();
    for &l in &labels {
        if l != IGNORE && l as usize >= k {
            return Err(fail(format!("label {l} out of range for {k} classes")));
        }
    }
    Ok((labels, h, w, k))
}

pub fn save_labels(
    path: &Path,
    labels: &[u8],
    height: usize,
    width: usize,
    num_classes: usize,
) -> Result<()> {
    std::fs::write(path, encode_labels(labels, height, width, num_classes)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_labels(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_labels(&path.display().to_string(), &bytes)
}

// ── Dataset splits ──────────────────────────────────────────────────────────

/// Index ranges for a train/validation split: train samples are indices
/// `[0, train)`, validation samples are `[train, train + val)`. Disjoint by
/// construction, and reproducible because samples are pure in their index.
pub fn split_indices(train: usize, val: usize) -> (std::ops::Range<u64>, std::ops::Range<u64>) {
    (0..train as u64, train as u64..(train + val) as u64)
}

#[cfg(test)]
#[path = "data_tests.rs"]
mod data_tests;
