//! Gaussian skeleton heatmaps and the per-stage guidance pyramid.

use crate::error::{Error, Result};
use crate::rankpool::minmax_normalize;
use crate::tensor::{maxpool3d, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Column, in pixels; pixel centers sit on integer coordinates.
    pub x: f32,
    /// Row, in pixels.
    pub y: f32,
    pub confidence: f32,
}

/// Keypoints of one frame. Empty when nobody was detected.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<Keypoint>,
    pub width: usize,
    pub height: usize,
}

impl KeypointSet {
    pub fn empty(width: usize, height: usize) -> Self {
        KeypointSet {
            points: Vec::new(),
            width,
            height,
        }
    }

    /// Rescales coordinates onto a `width × height` raster.
    pub fn resized(&self, width: usize, height: usize) -> KeypointSet {
        let sx = width as f32 / self.width as f32;
        let sy = height as f32 / self.height as f32;
        KeypointSet {
            points: self
                .points
                .iter()
                .map(|p| Keypoint {
                    x: p.x * sx,
                    y: p.y * sy,
                    confidence: p.confidence,
                })
                .collect(),
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Max,
    SumClamped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMapParams {
    pub sigma: f32,
    pub combine: Combine,
    pub amplitude: f32,
    pub confidence_scaling: bool,
}

impl Default for GaussianMapParams {
    fn default() -> Self {
        GaussianMapParams {
            sigma: 6.0,
            combine: Combine::Max,
            amplitude: 1.0,
            confidence_scaling: false,
        }
    }
}

/// Renders `[1, height, width]` with one isotropic Gaussian per keypoint.
pub fn render_gaussian_map(kp: &KeypointSet, params: &GaussianMapParams) -> Result<Tensor> {
    if !(params.sigma > 0.0) || !params.sigma.is_finite() {
        return Err(Error::invalid(
            "render_gaussian_map",
            format!("sigma must be positive and finite, got {}", params.sigma),
        ));
    }
    if kp.width == 0 || kp.height == 0 {
        return Err(Error::invalid(
            "render_gaussian_map",
            format!("raster {}x{} is empty", kp.width, kp.height),
        ));
    }
    let amp = params.amplitude as f64;
    let inv_two_var = 1.0 / (2.0 * params.sigma as f64 * params.sigma as f64);
    let mut map = vec![0.0f64; kp.width * kp.height];
    for p in &kp.points {
        let peak = if params.confidence_scaling {
            amp * p.confidence.clamp(0.0, 1.0) as f64
        } else {
            amp
        };
        for row in 0..kp.height {
            let dy = row as f64 - p.y as f64;
            for col in 0..kp.width {
                let dx = col as f64 - p.x as f64;
                let v = peak * (-(dx * dx + dy * dy) * inv_two_var).exp();
                let cell = &mut map[row * kp.width + col];
                *cell = match params.combine {
                    Combine::Max => cell.max(v),
                    Combine::SumClamped => *cell + v,
                };
            }
        }
    }
    let lo = amp.min(0.0);
    let hi = amp.max(0.0);
    Tensor::from_vec(
        [1, kp.height, kp.width],
        map.into_iter().map(|v| v.clamp(lo, hi) as f32).collect(),
    )
}

/// Feature-map extents at one backbone stage, `[C, T, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub stage: usize,
    pub channels: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl StageConfig {
    pub const DEFAULTS: [StageConfig; 3] = [
        StageConfig {
            stage: 1,
            channels: 192,
            depth: 16,
            height: 28,
            width: 28,
        },
        StageConfig {
            stage: 2,
            channels: 256,
            depth: 8,
            height: 14,
            width: 14,
        },
        StageConfig {
            stage: 3,
            channels: 512,
            depth: 4,
            height: 7,
            width: 7,
        },
    ];

    pub fn default_stage(stage: usize) -> Option<StageConfig> {
        StageConfig::DEFAULTS.iter().copied().find(|s| s.stage == stage)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.depth, self.height, self.width]
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.dims().to_vec()).expect("stage extents are positive")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePyramid {
    pub levels: Vec<(StageConfig, Tensor)>,
}

impl GuidancePyramid {
    pub fn level(&self, stage: usize) -> Option<&Tensor> {
        self.levels.iter().find(|(c, _)| c.stage == stage).map(|(_, t)| t)
    }
}

/// Indices of `out_len` frames spread uniformly over `in_len` frames.
/// A single input frame is replicated.
pub fn uniform_frame_indices(in_len: usize, out_len: usize) -> Vec<usize> {
    (0..out_len).map(|k| k * in_len / out_len).collect()
}

/// Downscales per-frame `[1, H, W]` maps by max pooling, resamples them in
/// time to each stage depth, and tiles them across the stage's channels.
pub fn build_guidance_pyramid(maps: &[Tensor], configs: &[StageConfig]) -> Result<GuidancePyramid> {
    const OP: &str = "build_guidance_pyramid";
    let first = maps.first().ok_or_else(|| Error::invalid(OP, "no heatmaps given"))?;
    let (h, w) = match first.dims() {
        &[1, h, w] => (h, w),
        _ => {
            return Err(Error::invalid(
                OP,
                format!("heatmaps must be [1, H, W], got {}", first.shape()),
            ))
        }
    };
    for m in &maps[1..] {
        first.check_same_shape(m, OP)?;
    }
    let mut levels = Vec::with_capacity(configs.len());
    for cfg in configs {
        if h % cfg.height != 0 || w % cfg.width != 0 {
            return Err(Error::invalid(
                OP,
                format!(
                    "stage {}: {h}x{w} is not divisible into {}x{}",
                    cfg.stage, cfg.height, cfg.width
                ),
            ));
        }
        let (fh, fw) = (h / cfg.height, w / cfg.width);
        let pooled = uniform_frame_indices(maps.len(), cfg.depth)
            .into_iter()
            .map(|i| {
                let as_volume = maps[i].clone().reshape([1, 1, h, w])?;
                maxpool3d(&as_volume, [1, fh, fw], [1, fh, fw])
            })
            .collect::<Result<Vec<_>>>()?;
        let plane = cfg.depth * cfg.height * cfg.width;
        let mut one_channel = Vec::with_capacity(plane);
        for p in &pooled {
            one_channel.extend_from_slice(p.data());
        }
        let mut data = Vec::with_capacity(plane * cfg.channels);
        for _ in 0..cfg.channels {
            data.extend_from_slice(&one_channel);
        }
        levels.push((*cfg, Tensor::from_vec(cfg.dims().to_vec(), data)?));
    }
    Ok(GuidancePyramid { levels })
}

/// One stage of the cascaded heatmap predictor. Stage 1 gets no previous map.
pub trait StageTransform {
    fn apply(&self, frame: &Tensor, previous: Option<&Tensor>) -> Result<Tensor>;
}

impl<F> StageTransform for F
where
    F: Fn(&Tensor, Option<&Tensor>) -> Result<Tensor>,
{
    fn apply(&self, frame: &Tensor, previous: Option<&Tensor>) -> Result<Tensor> {
        self(frame, previous)
    }
}

/// Non-learned stand-in for a trained stage: min-max normalized intensity
/// at stage 1, then an even blend of the Gaussian-smoothed previous map and
/// that intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTransform {
    pub sigma: f32,
}

impl StageTransform for ReferenceTransform {
    fn apply(&self, frame: &Tensor, previous: Option<&Tensor>) -> Result<Tensor> {
        let proxy = minmax_normalize(frame).tensor;
        match previous {
            None => Ok(proxy),
            Some(prev) => {
                let smoothed = gaussian_smooth(prev, self.sigma)?;
                smoothed.check_same_shape(&proxy, "ReferenceTransform")?;
                Ok(Tensor::new(
                    proxy.shape().clone(),
                    smoothed
                        .data()
                        .iter()
                        .zip(proxy.data())
                        .map(|(&s, &p)| 0.5 * s + 0.5 * p)
                        .collect(),
                )?)
            }
        }
    }
}

/// Separable, zero-padded Gaussian blur of a `[1, H, W]` map with a
/// normalized kernel of radius `ceil(3σ)`.
pub fn gaussian_smooth(map: &Tensor, sigma: f32) -> Result<Tensor> {
    let (h, w) = match map.dims() {
        &[1, h, w] => (h, w),
        _ => {
            return Err(Error::invalid(
                "gaussian_smooth",
                format!("expected [1, H, W], got {}", map.shape()),
            ))
        }
    };
    if !(sigma > 0.0) {
        return Err(Error::invalid("gaussian_smooth", format!("sigma {sigma} must be > 0")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma as f64 * sigma as f64)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();

    let src = map.data();
    let mut tmp = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .filter_map(|(i, k)| {
                    let cc = c as isize + i as isize - radius;
                    (0..w as isize)
                        .contains(&cc)
                        .then(|| k * src[r * w + cc as usize] as f64)
                })
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = taps
                .iter()
                .enumerate()
                .filter_map(|(i, k)| {
                    let rr = r as isize + i as isize - radius;
                    (0..h as isize).contains(&rr).then(|| k * tmp[rr as usize * w + c])
                })
                .sum::<f64>() as f32;
        }
    }
    Tensor::from_vec([1, h, w], out)
}

/// Runs stages in order; stage `s > 1` sees the frame and stage `s − 1`'s map.
pub fn cascade_apply(stages: &[&dyn StageTransform], frame: &Tensor) -> Result<Vec<Tensor>> {
    if stages.is_empty() {
        return Err(Error::invalid("cascade_apply", "need at least one stage"));
    }
    let mut maps: Vec<Tensor> = Vec::with_capacity(stages.len());
    for stage in stages {
        let next = stage.apply(frame, maps.last())?;
        maps.push(next);
    }
    Ok(maps)
}

pub fn cascade_average(stage_maps: &[Tensor]) -> Result<Tensor> {
    let first = stage_maps
        .first()
        .ok_or_else(|| Error::invalid("cascade_average", "no stage maps"))?;
    let mut acc = vec![0.0f64; first.numel()];
    for m in stage_maps {
        first.check_same_shape(m, "cascade_average")?;
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += v as f64;
        }
    }
    let n = stage_maps.len() as f64;
    Tensor::new(first.shape().clone(), acc.into_iter().map(|a| (a / n) as f32).collect())
}
