//! Multi-modal 3D Gaussian style transfer.
//!
//! Per-Gaussian color embeddings are restyled with AdaIN and decoded back to
//! RGB, leaving geometry untouched. Style statistics can come from an image,
//! from text, or from imported features; CLIP-like features are carried into
//! the VGG-like style domain by a learned mapping followed by a multi-round
//! flow-matching ODE ("subdivisive flow").

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod binio;
pub mod diff;
pub mod encoders;
mod error;
pub mod features;
pub mod flow;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod transfer;

pub use error::{Error, Result};
