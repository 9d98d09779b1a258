//! Dynamic-image rank pooling, skeleton guidance heatmaps, attention fusion
//! and cell-genotype kernels on a small dense `f32` tensor type.
//!
//! Volumetric tensors use the axis order `[C, T, H, W]`; frames are
//! `[C, H, W]`; heatmaps are `[1, H, W]`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod bench;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod losses;
pub mod nas;
pub mod rankpool;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
