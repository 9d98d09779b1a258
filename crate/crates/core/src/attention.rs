//! Guidance-gated feature fusion.
//!
//! Both fusions gate the features with the guidance shifted by one,
//! `A = (g + 1) ⊙ f`, so a zero map passes `f` through instead of erasing
//! it, then mix `concat(A, f)` back down to `C` channels with a pointwise
//! convolution.

use crate::error::{Error, Result};
use crate::tensor::{concat_channels, conv3d_same, Kernel3Spec, Tensor};

/// Pointwise (1×1×1) convolution from `2C` channels, laid out as
/// `concat(A, f)`, down to `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseMixer {
    kernel: Kernel3Spec,
    reference_init: bool,
}

impl PointwiseMixer {
    /// Output channel `c` selects input channel `c` of `A`.
    pub fn reference(channels: usize) -> Self {
        let mut weights = vec![0.0f32; channels * 2 * channels];
        for c in 0..channels {
            weights[c * 2 * channels + c] = 1.0;
        }
        let kernel = Kernel3Spec::new(
            [1, 1, 1],
            [1, 1, 1],
            2 * channels,
            channels,
            1,
            weights,
            vec![0.0; channels],
        )
        .expect("reference mixer is well formed");
        PointwiseMixer {
            kernel,
            reference_init: true,
        }
    }

    /// `weights` is `[C, 2C]` row-major, `bias` has `C` entries.
    pub fn new(channels: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("PointwiseMixer", "channels must be >= 1"));
        }
        let kernel = Kernel3Spec::new([1, 1, 1], [1, 1, 1], 2 * channels, channels, 1, weights, bias)?;
        Ok(PointwiseMixer {
            kernel,
            reference_init: false,
        })
    }

    /// Builds from a `[C, 2C + 1]` tensor whose last column is the bias.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, cols) = match t.dims() {
            &[c, cols] if cols == 2 * c + 1 => (c, cols),
            _ => {
                return Err(Error::invalid(
                    "PointwiseMixer",
                    format!("mixer tensor must be [C, 2C + 1], got {}", t.shape()),
                ))
            }
        };
        let mut weights = Vec::with_capacity(c * 2 * c);
        let mut bias = Vec::with_capacity(c);
        for row in t.data().chunks_exact(cols) {
            weights.extend_from_slice(&row[..2 * c]);
            bias.push(row[2 * c]);
        }
        PointwiseMixer::new(c, weights, bias)
    }

    pub fn channels(&self) -> usize {
        self.kernel.out_channels()
    }

    pub fn is_reference(&self) -> bool {
        self.reference_init
    }

    pub fn kernel(&self) -> &Kernel3Spec {
        &self.kernel
    }

    fn apply(&self, attended: &Tensor, features: &Tensor) -> Result<Tensor> {
        if self.reference_init {
            // selection of A; skipping the zero-weight terms keeps signed zeros intact
            return Ok(attended.clone());
        }
        conv3d_same(&concat_channels(&[attended, features])?, &self.kernel)
    }
}

fn gated_fuse(op: &'static str, f: &Tensor, guidance: &Tensor, mixer: &PointwiseMixer) -> Result<Tensor> {
    f.check_same_shape(guidance, op)?;
    let (c, ..) = f
        .shape()
        .cthw()
        .ok_or_else(|| Error::invalid(op, format!("expected [C, T, H, W] features, got {}", f.shape())))?;
    if mixer.channels() != c {
        return Err(Error::invalid(
            op,
            format!("mixer is sized for {} channels, features have {c}", mixer.channels()),
        ));
    }
    let attended = Tensor::new(
        f.shape().clone(),
        guidance
            .data()
            .iter()
            .zip(f.data())
            .map(|(&g, &x)| (g + 1.0) * x)
            .collect(),
    )?;
    mixer.apply(&attended, f)
}

/// Fusion guided by a normalized dynamic image.
pub fn datt_fuse(f: &Tensor, di_norm: &Tensor, mixer: &PointwiseMixer) -> Result<Tensor> {
    gated_fuse("datt_fuse", f, di_norm, mixer)
}

/// Fusion guided by a skeleton heatmap level.
pub fn satt_fuse(f: &Tensor, h: &Tensor, mixer: &PointwiseMixer) -> Result<Tensor> {
    gated_fuse("satt_fuse", f, h, mixer)
}
