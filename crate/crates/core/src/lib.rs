//! Featureless maximum-likelihood image registration and mosaicing.
//!
//! Input frames are modelled as noisy views of an unknown panorama through
//! parametric mappings `m(theta_i; x_0)` (panorama to frame coordinates).
//! Given the mappings, the maximum-likelihood panorama is the per-pixel mean
//! of all frames that observe a pixel ([`panorama::estimate_panorama`]).
//! Substituting it back leaves a weighted sum of squared pairwise
//! differences ([`panorama::ml_cost`]) that [`mlm::refine`] minimizes one
//! frame at a time, each step being a two-frame alignment of the frame
//! against the current panorama.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod image;
pub mod io;
pub mod mlm;
pub mod motion;
pub mod normal;
pub mod panorama;
mod par;
pub mod synth;
pub mod two_frame;

pub use error::{Error, Result};
pub use image::{GradientField, Pyramid, Raster};
pub use motion::{ModelKind, MotionParams};
