//! Checkpoint serialization: the `SLSCKPT1` container.
//!
//! A checkpoint is a flat bundle of named tensors:
//!
//! ```text
//! magic "SLSCKPT1" · version u32 · count u32
//! manifest: per tensor — name_len u32, name bytes, dtype u8, rank u8, dims u64…
//! payloads: raw little-endian IEEE-754 values, in manifest order
//! ```
//!
//! All integers are little-endian. Values round-trip bitwise, which is what
//! makes retraining-free reloads and the determinism guarantees testable.
//!
//! A model checkpoint carries three kinds of entries: `meta.*` f64 tensors
//! describing the architecture (so loading needs no external config),
//! the parameters and running statistics under their [`SlimSegModel::visit`]
//! names, and one `….bn.wN.initialized` flag per batch-norm record.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{SegNetConfig, SlimSegModel};
use crate::slim::WidthList;
use crate::tensor::{Dtype, Elem, Tensor};

pub const MAGIC: &[u8; 8] = b"SLSCKPT1";
pub const VERSION: u32 = 1;

// ── Raw bundle layer ────────────────────────────────────────────────────────

/// One serialized tensor: dtype, shape, and the exact payload bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Little-endian values, `numel · dtype.size()` bytes.
    pub bytes: Vec<u8>,
}

impl RawTensor {
    pub fn from_tensor<E: Elem>(t: &Tensor<E>) -> Self {
        let data = t.data();
        let mut bytes = Vec::with_capacity(data.len() * E::DTYPE.size());
        for &v in data.iter() {
            v.write_le(&mut bytes);
        }
        RawTensor { dtype: E::DTYPE, shape: t.shape().to_vec(), bytes }
    }

    pub fn from_f64s(values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for &v in values {
            v.write_le(&mut bytes);
        }
        RawTensor { dtype: Dtype::F64, shape: vec![values.len()], bytes }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f64s(&self) -> Result<Vec<f64>> {
        if self.dtype != Dtype::F64 {
            return Err(Error::invalid("checkpoint", "expected an f64 tensor"));
        }
        Ok(self.bytes.chunks_exact(8).map(f64::read_le).collect())
    }

    /// Copies this entry's values into an existing tensor, bitwise. The
    /// destination must match in dtype and shape.
    pub fn copy_into<E: Elem>(&self, name: &str, dst: &Tensor<E>) -> Result<()> {
        if self.dtype != E::DTYPE {
            return Err(Error::invalid(
                "checkpoint",
                format!("tensor {name} is stored as {:?} but {:?} was requested", self.dtype, E::DTYPE),
            ));
        }
        if self.shape != dst.shape() {
            return Err(Error::invalid(
                "checkpoint",
                format!("tensor {name} has shape {:?}, expected {:?}", self.shape, dst.shape()),
            ));
        }
        let size = E::DTYPE.size();
        let mut data = dst.data_mut();
        for (v, chunk) in data.iter_mut().zip(self.bytes.chunks_exact(size)) {
            *v = E::read_le(chunk);
        }
        Ok(())
    }
}

/// Serializes a named-tensor bundle to `SLSCKPT1` bytes.
pub fn encode_bundle(entries: &[(String, RawTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::invalid("checkpoint", "too many tensors for one bundle"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let name_bytes = name.as_bytes();
        let name_len = u32::try_from(name_bytes.len())
            .map_err(|_| Error::invalid("checkpoint", "tensor name too long"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(t.dtype.code());
        let rank = u8::try_from(t.shape.len())
            .map_err(|_| Error::invalid("checkpoint", "tensor rank too large"))?;
        out.push(rank);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        if t.bytes.len() != t.numel() * t.dtype.size() {
            return Err(Error::invalid(
                "checkpoint",
                format!("tensor {name}: payload is {} bytes, shape implies {}", t.bytes.len(), t.numel() * t.dtype.size()),
            ));
        }
    }
    for (_, t) in entries {
        out.extend_from_slice(&t.bytes);
    }
    Ok(out)
}

struct Reader<'a> {
    path: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.path,
                format!("truncated file: wanted {n} bytes at offset {}", self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses `SLSCKPT1` bytes back into the named-tensor bundle, validating the
/// structure exhaustively. `path` is only used for error messages.
pub fn decode_bundle(path: &str, bytes: &[u8]) -> Result<Vec<(String, RawTensor)>> {
    let fail = |detail: String| Error::format(path, detail);
    let mut r = Reader { path, bytes, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(fail("bad magic, not an SLSCKPT1 file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fail(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;

    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| fail("tensor name is not valid UTF-8".into()))?
            .to_string();
        let dtype = Dtype::from_code(r.take(1)?[0])
            .ok_or_else(|| fail(format!("unknown dtype code for tensor {name}")))?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        manifest.push((name, dtype, shape));
    }

    let mut entries = Vec::with_capacity(count);
    for (name, dtype, shape) in manifest {
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * dtype.size())?.to_vec();
        entries.push((name, RawTensor { dtype, shape, bytes: payload }));
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes after the last payload", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn write_bundle(path: &Path, entries: &[(String, RawTensor)]) -> Result<()> {
    let bytes = encode_bundle(entries)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_bundle(path: &Path) -> Result<Vec<(String, RawTensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_bundle(&path.display().to_string(), &bytes)
}

// ── Model layer ─────────────────────────────────────────────────────────────

fn usizes_to_f64s(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Flattens a model into bundle entries: `meta.*` first, then parameters and
/// statistics in visit order, then BN-initialized flags.
pub fn model_entries<E: Elem>(model: &SlimSegModel<E>) -> Vec<(String, RawTensor)> {
    let cfg = model.config();
    let mut entries: Vec<(String, RawTensor)> = vec![
        ("meta.num_classes".into(), RawTensor::from_f64s(&[cfg.num_classes as f64])),
        ("meta.input_channels".into(), RawTensor::from_f64s(&[cfg.input_channels as f64])),
        ("meta.stage_channels".into(), RawTensor::from_f64s(&usizes_to_f64s(&cfg.stage_channels))),
        ("meta.ppm_bins".into(), RawTensor::from_f64s(&usizes_to_f64s(&cfg.ppm_bins))),
        ("meta.ppm_channels".into(), RawTensor::from_f64s(&[cfg.ppm_channels as f64])),
        ("meta.decoder_channels".into(), RawTensor::from_f64s(&[cfg.decoder_channels as f64])),
        ("meta.boundary_channels".into(), RawTensor::from_f64s(&[cfg.boundary_channels as f64])),
        ("meta.widths".into(), RawTensor::from_f64s(cfg.widths.multipliers())),
        ("meta.has_boundary".into(), RawTensor::from_f64s(&[f64::from(cfg.with_boundary)])),
    ];
    model.visit(&mut |name, _, t| entries.push((name.to_string(), RawTensor::from_tensor(t))));
    model.visit_bn_flags(&mut |name, flag| {
        entries
            .push((format!("{name}.initialized"), RawTensor::from_f64s(&[f64::from(flag.get())])));
    });
    entries
}

pub fn save_model<E: Elem>(model: &SlimSegModel<E>, path: &Path) -> Result<()> {
    write_bundle(path, &model_entries(model))
}

fn meta_scalar(entries: &[(String, RawTensor)], name: &str, path: &str) -> Result<f64> {
    let t = entries
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::format(path, format!("missing {name}")))?;
    let v = t.1.to_f64s()?;
    if v.len() != 1 {
        return Err(Error::format(path, format!("{name} must hold exactly one value")));
    }
    Ok(v[0])
}

fn meta_vec(entries: &[(String, RawTensor)], name: &str, path: &str) -> Result<Vec<f64>> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::format(path, format!("missing {name}")))?
        .1
        .to_f64s()
}

fn as_usize(v: f64, name: &str, path: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(Error::format(path, format!("{name} holds a non-integral value {v}")));
    }
    Ok(v as usize)
}

/// Reconstructs a model from decoded bundle entries. Every non-meta entry
/// must land in the model and every model tensor must be present — leftovers
/// in either direction are structural errors.
pub fn model_from_entries<E: Elem>(
    path: &str,
    entries: &[(String, RawTensor)],
) -> Result<SlimSegModel<E>> {
    let widths = WidthList::new(meta_vec(entries, "meta.widths", path)?)
        .map_err(|e| Error::format(path, format!("bad meta.widths: {e}")))?;
    let to_usizes = |name: &str| -> Result<Vec<usize>> {
        meta_vec(entries, name, path)?.iter().map(|&v| as_usize(v, name, path)).collect()
    };
    let cfg = SegNetConfig {
        num_classes: as_usize(meta_scalar(entries, "meta.num_classes", path)?, "meta.num_classes", path)?,
        stage_channels: to_usizes("meta.stage_channels")?,
        ppm_bins: to_usizes("meta.ppm_bins")?,
        ppm_channels: as_usize(meta_scalar(entries, "meta.ppm_channels", path)?, "meta.ppm_channels", path)?,
        decoder_channels: as_usize(meta_scalar(entries, "meta.decoder_channels", path)?, "meta.decoder_channels", path)?,
        boundary_channels: as_usize(meta_scalar(entries, "meta.boundary_channels", path)?, "meta.boundary_channels", path)?,
        widths,
        input_channels: as_usize(meta_scalar(entries, "meta.input_channels", path)?, "meta.input_channels", path)?,
        with_boundary: meta_scalar(entries, "meta.has_boundary", path)? != 0.0,
    };
    let model = SlimSegModel::build(cfg, 0)
        .map_err(|e| Error::format(path, format!("architecture metadata rejected: {e}")))?;

    let mut consumed = std::collections::HashSet::new();
    let lookup = |name: &str| -> Option<&RawTensor> {
        entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    };
    let mut fill_err = Ok(());
    model.visit(&mut |name, _, t| {
        if fill_err.is_err() {
            return;
        }
        consumed.insert(name.to_string());
        match lookup(name) {
            Some(raw) => fill_err = raw.copy_into(name, t),
            None => fill_err = Err(Error::format(path, format!("missing tensor {name}"))),
        }
    });
    fill_err?;
    let mut flag_err = Ok(());
    model.visit_bn_flags(&mut |name, flag| {
        if flag_err.is_err() {
            return;
        }
        let key = format!("{name}.initialized");
        consumed.insert(key.clone());
        match lookup(&key).map(|raw| raw.to_f64s()) {
            Some(Ok(v)) if v.len() == 1 => flag.set(v[0] != 0.0),
            Some(Ok(_)) => flag_err = Err(Error::format(path, format!("{key} must hold one value"))),
            Some(Err(e)) => flag_err = Err(e),
            None => flag_err = Err(Error::format(path, format!("missing flag {key}"))),
        }
    });
    flag_err?;

    for (name, _) in entries {
        if !name.starts_with("meta.") && !consumed.contains(name) {
            return Err(Error::format(path, format!("unexpected tensor {name} for this architecture")));
        }
    }
    Ok(model)
}

pub fn load_model<E: Elem>(path: &Path) -> Result<SlimSegModel<E>> {
    let entries = read_bundle(path)?;
    model_from_entries(&path.display().to_string(), &entries)
}

#[cfg(test)]
#[path = "checkpoint_tests.rs"]
mod checkpoint_tests;
