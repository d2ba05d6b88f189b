//! Width-switchable ("slimmable") semantic segmentation with boundary-guided
//! training, built on a self-contained reverse-mode autodiff tape.
//!
//! One set of full-width parameters serves a whole family of subnetworks:
//! every narrower width runs on the leading channel slice of each kernel,
//! with its own batch-norm statistics. Training visits the widths of one
//! batch from widest to narrowest, distilling each narrower network from the
//! detached outputs of a wider one, and adds a boundary head whose
//! predictions both receive supervision and gate a boundary-guided
//! segmentation term. Everything — tensors, gradients, data synthesis,
//! metrics, the CLI — is deterministic given a seed.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;

pub mod model;
pub mod slim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
