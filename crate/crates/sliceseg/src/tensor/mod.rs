//! Dense tensors and a reverse-mode autodiff tape.
//!
//! The design is a classic Wengert list: operations compute their output
//! eagerly and push a node onto a [`Tape`]; [`backward`] replays the nodes in
//! reverse, carrying vector-Jacobian products through a transient gradient
//! map and adding the result into the `grad` buffer of every tensor that
//! requires gradients. Nothing here is lazy and nothing is parallel — every
//! reduction runs in a fixed row-major element order, so a given program
//! produces bitwise-identical numbers on every run.

mod conv;
mod norm;
mod ops;
mod resample;

pub use conv::conv2d;
pub use norm::{batch_norm2d, Mode};
pub use ops::{
    add, concat_channels, log, mul, relu, scale, sigmoid, slice_kernel, slice_vec,
    softmax_channels, sum,
};
pub use resample::{adaptive_avg_pool, bilinear_upsample};

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

// ── Element types ───────────────────────────────────────────────────────────

/// Payload type of a tensor, as stored in checkpoints.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Scalar types the engine runs on. Training uses `f32`; gradient checking
/// runs the identical code at `f64`, where central differences are trustworthy.
pub trait Elem:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from the first `Dtype::size` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Elem for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Elem for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

// ── Tensor ──────────────────────────────────────────────────────────────────

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

struct Inner<E: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
}

/// A dense row-major tensor. `Tensor` is a cheap handle (`Rc` inside): clones
/// alias the same storage, which is how parameters stay shared between the
/// model, the tape, and the optimizer.
///
/// Values are written through [`Tensor::data_mut`] only for *leaf* tensors —
/// parameters, running statistics, inputs. Tensors produced by operations are
/// treated as immutable; mutating one invalidates any later `backward` over
/// the graph that produced it.
pub struct Tensor<E: Elem> {
    inner: Rc<Inner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Elem> Tensor<E> {
    fn alloc(data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
            }),
        }
    }

    /// A constant (non-tracked) tensor from raw row-major data.
    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "from_vec",
                format!("data length {} does not match shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::alloc(data, shape.to_vec(), false))
    }

    /// A gradient-tracked leaf (parameter) from raw row-major data.
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "param",
                format!("data length {} does not match shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::alloc(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::alloc(vec![E::zero(); numel], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self::alloc(vec![value; numel], shape.to_vec(), false)
    }

    pub fn scalar(value: E) -> Self {
        Self::alloc(vec![value], vec![], false)
    }

    pub(crate) fn output(data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Self::alloc(data, shape, requires_grad)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn dtype(&self) -> Dtype {
        E::DTYPE
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Shared read access to the raw values.
    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw values. For leaf tensors only (see the type
    /// docs); used by the optimizer, running-statistic updates, and tests
    /// that perturb parameters.
    pub fn data_mut(&self) -> RefMut<'_, Vec<E>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected a scalar, got shape {:?}", self.shape()),
            ));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Current accumulated gradient, if any backward pass has reached this
    /// tensor since the last [`Tensor::zero_grad`].
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// A fresh constant leaf carrying a copy of this tensor's current values.
    /// Gradients never flow through the result — this is the gradient-stop
    /// used to freeze distillation teachers.
    pub fn detach(&self) -> Tensor<E> {
        Self::alloc(self.to_vec(), self.inner.shape.clone(), false)
    }

    /// Same values converted to another element type (used by tests that
    /// rerun an `f32` scenario at `f64`).
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        let data = self.data().iter().map(|v| F::from_f64(v.as_f64())).collect();
        Tensor::<F>::alloc(data, self.inner.shape.clone(), false)
    }

    pub fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

// ── Tape ────────────────────────────────────────────────────────────────────

/// Transient per-backward gradient storage, keyed by tensor id. Operation
/// nodes add their input gradients here; the walk in [`backward`] drains it.
pub(crate) struct GradSink<E: Elem> {
    map: HashMap<u64, Vec<E>>,
}

impl<E: Elem> GradSink<E> {
    /// The gradient buffer for `t`, created zero-filled on first access.
    pub(crate) fn buf(&mut self, t: &Tensor<E>) -> &mut [E] {
        self.map.entry(t.id()).or_insert_with(|| vec![E::zero(); t.numel()])
    }

    /// Adds `g` elementwise into the buffer for `t`.
    pub(crate) fn add(&mut self, t: &Tensor<E>, g: &[E]) {
        let buf = self.buf(t);
        for (b, &v) in buf.iter_mut().zip(g) {
            *b += v;
        }
    }
}

type BackFn<E> = Box<dyn Fn(&[E], &mut GradSink<E>)>;

struct Node<E: Elem> {
    out: Tensor<E>,
    back: BackFn<E>,
}

/// Record of every gradient-relevant operation since the last
/// [`Tape::clear`]. Operations on inputs that do not require gradients skip
/// the tape entirely, so inference-mode forwards record nothing.
pub struct Tape<E: Elem> {
    nodes: RefCell<Vec<Node<E>>>,
    // Handles to every op input, so leaves can receive their gradients at the
    // end of a backward walk.
    watched: RefCell<HashMap<u64, Tensor<E>>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), watched: RefCell::new(HashMap::new()) }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Drops all recorded nodes. Tensor values (parameters included) are
    /// untouched; only the ability to backpropagate through past operations
    /// is forgotten.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.watched.borrow_mut().clear();
    }

    pub(crate) fn record(&self, inputs: &[&Tensor<E>], out: &Tensor<E>, back: BackFn<E>) {
        debug_assert!(out.requires_grad());
        let mut watched = self.watched.borrow_mut();
        for t in inputs {
            watched.entry(t.id()).or_insert_with(|| (*t).clone());
        }
        self.nodes.borrow_mut().push(Node { out: out.clone(), back });
    }
}

/// Replays `tape` in reverse from the scalar `loss`, adding `dloss/dt` into
/// the `grad` buffer of every tensor with `requires_grad` reachable from the
/// loss. Gradients accumulate: calling this twice doubles them, and two
/// separate losses contribute the sum of their individual gradients.
pub fn backward<E: Elem>(tape: &Tape<E>, loss: &Tensor<E>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::shape(
            "backward",
            format!("loss must be a scalar, got shape {:?}", loss.shape()),
        ));
    }
    let mut sink = GradSink { map: HashMap::new() };
    sink.map.insert(loss.id(), vec![E::one()]);

    let nodes = tape.nodes.borrow();
    for node in nodes.iter().rev() {
        // A node whose output never received a gradient is off the loss path.
        let Some(gout) = sink.map.remove(&node.out.id()) else { continue };
        (node.back)(&gout, &mut sink);
        if node.out.requires_grad() {
            node.out.accumulate_grad(&gout);
        }
    }
    drop(nodes);

    // Whatever is left in the sink belongs to leaves (tensors no node produced).
    // The loss itself can be such a leaf, e.g. a lone parameter used directly
    // as the objective; its seed gradient is delivered like any other.
    let watched = tape.watched.borrow();
    for (id, g) in sink.map {
        if let Some(t) = watched.get(&id) {
            if t.requires_grad() {
                t.accumulate_grad(&g);
            }
        } else if id == loss.id() && loss.requires_grad() {
            loss.accumulate_grad(&g);
        }
    }
    Ok(())
}

// ── Finite-difference gradient checking ─────────────────────────────────────

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error across every element of every checked tensor.
    pub max_rel_err: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the tape's analytic gradients against central finite differences.
///
/// `f` must rebuild the computation from scratch on the given tape each call
/// and return a scalar loss; it reads its inputs through the same handles
/// passed in `inputs` (clones alias, so perturbations made here are visible
/// inside `f`). Inputs must be leaves with `requires_grad` set. `f` must be
/// deterministic and selection-stable: data-dependent choices inside it
/// (thresholded masks, pixel mining) have to be frozen so a `±step` nudge
/// cannot flip them.
pub fn grad_check<E, F>(f: F, inputs: &[Tensor<E>], step: f64, tol: f64) -> Result<GradCheckReport>
where
    E: Elem,
    F: Fn(&Tape<E>) -> Result<Tensor<E>>,
{
    for t in inputs {
        if !t.requires_grad() {
            return Err(Error::invalid(
                "grad_check",
                format!("input {:?} does not require gradients", t.shape()),
            ));
        }
        t.zero_grad();
    }

    // Analytic pass.
    let tape = Tape::new();
    let loss = f(&tape)?;
    if loss.numel() != 1 {
        return Err(Error::shape("grad_check", "f must return a scalar".to_string()));
    }
    backward(&tape, &loss)?;
    let analytic: Vec<Vec<E>> =
        inputs.iter().map(|t| t.grad().unwrap_or_else(|| vec![E::zero(); t.numel()])).collect();
    drop(tape);

    // Numeric pass: nudge one element at a time through the shared handles.
    let h = step;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let saved = t.data()[j];
            t.data_mut()[j] = saved + E::from_f64(h);
            let fp = f(&Tape::new())?.item()?.as_f64();
            t.data_mut()[j] = saved - E::from_f64(h);
            let fm = f(&Tape::new())?.item()?.as_f64();
            t.data_mut()[j] = saved;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti][j].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, checked, tolerance: tol, passed: max_rel < tol })
}

// ── Shared indexing helpers for the op modules ──────────────────────────────

/// Checks a rank-4 shape and returns `(b, c, h, w)`.
pub(crate) fn dims4(op: &'static str, t: &Tensor<impl Elem>) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::shape(op, format!("expected a rank-4 tensor, got shape {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}
