//! Dense `f32` tensors and the naive kernels every other module builds on.
//!
//! Layout is row-major (last axis fastest). Volumetric kernels use the fixed
//! axis order `[C, T, H, W]`; callers that carry a batch axis strip it before
//! calling in. All reductions and convolutions accumulate in `f64`.

use std::fmt;

use crate::error::{Error, Result};

/// Ordered list of positive extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::InvalidShape {
                dims,
                reason: "rank must be at least 1".into(),
            });
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims,
                reason: "all extents must be >= 1".into(),
            });
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(Error::InvalidShape {
                dims,
                reason: "element count overflows usize".into(),
            });
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Unpacks a rank-4 `[C, T, H, W]` shape.
    pub fn cthw(&self) -> Option<(usize, usize, usize, usize)> {
        match self.0[..] {
            [c, t, h, w] => Some((c, t, h, w)),
            _ => None,
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{} ", self.shape)?;
        let list = f.debug_list().entries(self.data.iter().take(PREVIEW)).finish();
        if self.data.len() > PREVIEW {
            write!(f, "...")?;
        }
        list
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape {
                dims: shape.dims().to_vec(),
                reason: format!("data length {} != element count {}", data.len(), shape.numel()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(Shape::new(dims)?, data)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.shape.clone())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(Shape::new(dims)?, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    /// Elementwise `|self − expected| <= max(rel·|expected|, abs)`; false on
    /// shape mismatch.
    pub fn approx_eq(&self, expected: &Tensor, rel: f64, abs: f64) -> bool {
        self.shape == expected.shape
            && self.data.iter().zip(&expected.data).all(|(&a, &b)| {
                let (a, b) = (a as f64, b as f64);
                (a - b).abs() <= (rel * b.abs()).max(abs)
            })
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(self, other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(self, other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(self, other, BinaryOp::Mul)
    }

    /// Extent of axis 0, the channel axis by convention.
    pub fn channels(&self) -> usize {
        self.dims()[0]
    }

    /// Channels `start..end` along axis 0.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<Tensor> {
        let c = self.channels();
        if start >= end || end > c {
            return Err(Error::invalid(
                "channel_slice",
                format!("range {start}..{end} outside 0..{c}"),
            ));
        }
        let plane = self.numel() / c;
        let mut dims = self.dims().to_vec();
        dims[0] = end - start;
        Tensor::from_vec(dims, self.data[start * plane..end * plane].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

pub fn elementwise(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    a.check_same_shape(b, "elementwise")?;
    let f: fn(f32, f32) -> f32 = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn scalar_affine(a: &Tensor, scale: f32, offset: f32) -> Tensor {
    a.map(|x| scale * x + offset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Min,
    Max,
    Mean,
    /// Population variance.
    Var,
}

pub fn reduce(a: &Tensor, stat: Stat) -> f64 {
    let xs = a.data.iter().map(|&x| x as f64);
    match stat {
        Stat::Min => xs.fold(f64::INFINITY, f64::min),
        Stat::Max => xs.fold(f64::NEG_INFINITY, f64::max),
        Stat::Mean => xs.sum::<f64>() / a.numel() as f64,
        Stat::Var => {
            let mean = reduce(a, Stat::Mean);
            xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / a.numel() as f64
        }
    }
}

/// Softmax with max subtraction, computed in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

/// 3D convolution kernel with "same" zero padding.
///
/// Weights are laid out `[C_out, C_in / groups, k_t, k_h, k_w]`. A depthwise
/// kernel has `groups == C_in == C_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3Spec {
    extent: [usize; 3],
    dilation: [usize; 3],
    in_channels: usize,
    out_channels: usize,
    groups: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Kernel3Spec {
    pub fn new(
        extent: [usize; 3],
        dilation: [usize; 3],
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        const OP: &str = "Kernel3Spec";
        if extent.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::invalid(
                OP,
                format!("kernel extents {extent:?} must be odd; \"same\" padding is undefined otherwise"),
            ));
        }
        if dilation.contains(&0) {
            return Err(Error::invalid(OP, format!("dilation {dilation:?} must be >= 1")));
        }
        if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::invalid(
                OP,
                format!("groups {groups} must divide in {in_channels} and out {out_channels}"),
            ));
        }
        let taps = extent.iter().product::<usize>();
        let expected = out_channels * (in_channels / groups) * taps;
        if weights.len() != expected {
            return Err(Error::invalid(
                OP,
                format!("expected {expected} weights, got {}", weights.len()),
            ));
        }
        if bias.len() != out_channels {
            return Err(Error::invalid(
                OP,
                format!("expected {out_channels} biases, got {}", bias.len()),
            ));
        }
        Ok(Kernel3Spec {
            extent,
            dilation,
            in_channels,
            out_channels,
            groups,
            weights,
            bias,
        })
    }

    /// Depthwise kernel with the same taps in every channel and zero bias.
    pub fn depthwise(channels: usize, extent: [usize; 3], dilation: [usize; 3], taps: &[f32]) -> Result<Self> {
        let weights = taps.iter().copied().cycle().take(taps.len() * channels).collect();
        Kernel3Spec::new(
            extent,
            dilation,
            channels,
            channels,
            channels,
            weights,
            vec![0.0; channels],
        )
    }

    /// Depthwise 1×1×1 kernel with weight 1.
    pub fn identity(channels: usize) -> Self {
        Kernel3Spec::depthwise(channels, [1, 1, 1], [1, 1, 1], &[1.0]).expect("identity kernel is well formed")
    }

    /// Depthwise mean filter: every tap `1 / (k_t k_h k_w)`.
    pub fn depthwise_box(channels: usize, extent: [usize; 3], dilation: [usize; 3]) -> Result<Self> {
        let taps = extent.iter().product::<usize>();
        Kernel3Spec::depthwise(channels, extent, dilation, &vec![1.0 / taps as f32; taps])
    }

    pub fn extent(&self) -> [usize; 3] {
        self.extent
    }

    pub fn dilation(&self) -> [usize; 3] {
        self.dilation
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn padding(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.dilation[a] * (self.extent[a] - 1) / 2)
    }
}

fn expect_cthw(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    x.shape()
        .cthw()
        .ok_or_else(|| Error::invalid(op, format!("expected a [C, T, H, W] tensor, got {}", x.shape())))
}

/// Zero-padded "same" 3D convolution over a `[C, T, H, W]` tensor.
pub fn conv3d_same(x: &Tensor, k: &Kernel3Spec) -> Result<Tensor> {
    let (c, t, h, w) = expect_cthw(x, "conv3d_same")?;
    if c != k.in_channels {
        return Err(Error::invalid(
            "conv3d_same",
            format!("input has {c} channels, kernel expects {}", k.in_channels),
        ));
    }
    let [kt, kh, kw] = k.extent;
    let [dt, dh, dw] = k.dilation;
    let [pt, ph, pw] = k.padding();
    let cin_g = k.in_channels / k.groups;
    let cout_g = k.out_channels / k.groups;
    let plane = t * h * w;
    let taps = kt * kh * kw;
    let mut out = vec![0.0f32; k.out_channels * plane];

    for oc in 0..k.out_channels {
        let g = oc / cout_g;
        let wbase = oc * cin_g * taps;
        for ot in 0..t {
            for oh in 0..h {
                for ow in 0..w {
                    let mut acc = k.bias[oc] as f64;
                    for icg in 0..cin_g {
                        let ic = g * cin_g + icg;
                        let xbase = ic * plane;
                        let wic = wbase + icg * taps;
                        for it in 0..kt {
                            let st = (ot + it * dt) as isize - pt as isize;
                            if st < 0 || st >= t as isize {
                                continue;
                            }
                            for ih in 0..kh {
                                let sh = (oh + ih * dh) as isize - ph as isize;
                                if sh < 0 || sh >= h as isize {
                                    continue;
                                }
                                let row = xbase + (st as usize * h + sh as usize) * w;
                                let wrow = wic + (it * kh + ih) * kw;
                                for iw in 0..kw {
                                    let sw = (ow + iw * dw) as isize - pw as isize;
                                    if sw < 0 || sw >= w as isize {
                                        continue;
                                    }
                                    acc += k.weights[wrow + iw] as f64 * x.data[row + sw as usize] as f64;
                                }
                            }
                        }
                    }
                    out[oc * plane + (ot * h + oh) * w + ow] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec([k.out_channels, t, h, w], out)
}

/// Per-window maximum over a `[C, T, H, W]` tensor, no padding.
pub fn maxpool3d(x: &Tensor, window: [usize; 3], stride: [usize; 3]) -> Result<Tensor> {
    let (c, t, h, w) = expect_cthw(x, "maxpool3d")?;
    if window.contains(&0) || stride.contains(&0) {
        return Err(Error::invalid(
            "maxpool3d",
            format!("window {window:?} and stride {stride:?} must be positive"),
        ));
    }
    let input = [t, h, w];
    if (0..3).any(|a| window[a] > input[a]) {
        return Err(Error::invalid(
            "maxpool3d",
            format!("window {window:?} larger than input extents {input:?}"),
        ));
    }
    let [ot, oh, ow] = [0, 1, 2].map(|a| (input[a] - window[a]) / stride[a] + 1);
    let mut out = Vec::with_capacity(c * ot * oh * ow);
    for ch in 0..c {
        let base = ch * t * h * w;
        for i in 0..ot {
            for j in 0..oh {
                for l in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for a in i * stride[0]..i * stride[0] + window[0] {
                        for b in j * stride[1]..j * stride[1] + window[1] {
                            let row = base + (a * h + b) * w;
                            for &v in &x.data[row + l * stride[2]..row + l * stride[2] + window[2]] {
                                m = m.max(v);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::from_vec([c, ot, oh, ow], out)
}

/// Concatenates along axis 0; all other extents must agree.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no tensors to concatenate"))?;
    let rest = &first.dims()[1..];
    let mut channels = 0;
    for p in parts {
        if p.dims()[1..] != *rest {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first.shape().clone(),
                right: p.shape().clone(),
            });
        }
        channels += p.channels();
    }
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let mut dims = first.dims().to_vec();
    dims[0] = channels;
    Tensor::from_vec(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t1(v: &[f32]) -> Tensor {
        Tensor::from_vec([v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn shape_rejects_zero_and_empty() {
        assert!(Shape::new(vec![3, 0]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
        assert!(Shape::new(vec![usize::MAX, 2]).is_err());
        assert_eq!(Shape::new(vec![2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(t1(&[1., 2.]).mul(&t1(&[3., 4.])).unwrap().data(), &[3., 8.]);
        let x = t1(&[1.5, -2.0, 7.0]);
        assert_eq!(x.add(&x.zeros_like()).unwrap(), x);
        assert_eq!(x.sub(&x).unwrap(), x.zeros_like());
    }

    #[test]
    fn elementwise_mismatch_names_both_shapes() {
        let err = t1(&[1., 2.]).add(&t1(&[1., 2., 3.])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn affine_examples() {
        assert_eq!(scalar_affine(&t1(&[0., 1.]), 1., 1.).data(), &[1., 2.]);
        let x = t1(&[3., -1.]);
        assert_eq!(scalar_affine(&x, 1., 0.), x);
        assert_eq!(scalar_affine(&t1(&[2., 6.]), 0.25, -0.5).data(), &[0., 1.]);
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(reduce(&t1(&[2., 6., 3.]), Stat::Min), 2.0);
        assert_eq!(reduce(&t1(&[2., 6., 3.]), Stat::Max), 6.0);
        assert_eq!(reduce(&t1(&[1., 3.]), Stat::Mean), 2.0);
        assert_eq!(reduce(&t1(&[1., 3.]), Stat::Var), 1.0);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0; 7]);
        for p in &s {
            assert!((p - 1.0 / 7.0).abs() < 1e-7);
        }
        let s = softmax(&[1f32.ln(), 3f32.ln()]);
        assert!((s[0] - 0.25).abs() < 1e-6 && (s[1] - 0.75).abs() < 1e-6);
        let s = softmax(&[1e4, 0.0]);
        assert!(s.iter().all(|p| p.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-6 && s[1] < 1e-6);
    }

    #[test]
    fn conv_identity_and_zero() {
        let x = Tensor::from_vec([1, 2, 3, 3], (0..18).map(|v| v as f32 * 0.5 - 3.0).collect()).unwrap();
        assert_eq!(conv3d_same(&x, &Kernel3Spec::identity(1)).unwrap(), x);
        let zero = Kernel3Spec::depthwise(1, [3, 3, 3], [1, 1, 1], &[0.0; 27]).unwrap();
        assert_eq!(conv3d_same(&x, &zero).unwrap(), x.zeros_like());
    }

    #[test]
    fn conv_box_center_is_sum_of_all_inputs() {
        let vals: Vec<f32> = (0..27).map(|i| ((i * 37 % 11) as f32) - 4.25).collect();
        let oracle: f64 = vals.iter().map(|&v| v as f64).sum();
        let x = Tensor::from_vec([1, 3, 3, 3], vals).unwrap();
        let k = Kernel3Spec::depthwise(1, [3, 3, 3], [1, 1, 1], &[1.0; 27]).unwrap();
        let y = conv3d_same(&x, &k).unwrap();
        assert_eq!(y.dims(), &[1, 3, 3, 3]);
        assert!((y.data()[13] as f64 - oracle).abs() < 1e-5);
    }

    #[test]
    fn conv_dilated_preserves_extents() {
        let x = Tensor::full(Shape::new(vec![2, 5, 5, 6]).unwrap(), 1.0);
        let k = Kernel3Spec::depthwise_box(2, [3, 3, 3], [2, 2, 2]).unwrap();
        let y = conv3d_same(&x, &k).unwrap();
        assert_eq!(y.dims(), x.dims());
        // voxel (2, 2, 2) sees all 27 dilated taps
        let (h, w) = (5, 6);
        let centre = (2 * h + 2) * w + 2;
        assert!((y.data()[centre] - 1.0).abs() < 1e-6);
        assert!(y.data()[0] < 1.0);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        assert!(Kernel3Spec::depthwise(1, [2, 3, 3], [1, 1, 1], &[0.0; 18]).is_err());
        assert!(Kernel3Spec::depthwise(1, [3, 3, 3], [0, 1, 1], &[0.0; 27]).is_err());
    }

    #[test]
    fn conv_dense_mixes_channels() {
        // 1x1x1 conv from 2 channels to 1: y = 2*a - b + 0.5
        let k = Kernel3Spec::new([1, 1, 1], [1, 1, 1], 2, 1, 1, vec![2.0, -1.0], vec![0.5]).unwrap();
        let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let y = conv3d_same(&x, &k).unwrap();
        assert_eq!(y.data(), &[2.0 - 3.0 + 0.5, 4.0 - 5.0 + 0.5]);
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![1., 5., 2., 4.]).unwrap();
        assert_eq!(maxpool3d(&x, [1, 1, 2], [1, 1, 2]).unwrap().data(), &[5., 4.]);

        let c = Tensor::full(Shape::new(vec![2, 2, 4, 4]).unwrap(), 0.3);
        let p = maxpool3d(&c, [2, 2, 2], [2, 2, 2]).unwrap();
        assert_eq!(p.dims(), &[2, 1, 2, 2]);
        assert!(p.data().iter().all(|&v| v == 0.3));

        let big = Tensor::zeros(Shape::new(vec![1, 1, 224, 224]).unwrap());
        assert_eq!(maxpool3d(&big, [1, 8, 8], [1, 8, 8]).unwrap().dims(), &[1, 1, 28, 28]);

        assert!(maxpool3d(&x, [1, 1, 5], [1, 1, 1]).is_err());
    }

    #[test]
    fn concat_examples() {
        let parts: Vec<Tensor> = (0..4)
            .map(|i| Tensor::full(Shape::new(vec![3, 2, 2, 2]).unwrap(), i as f32))
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap().dims(), &[12, 2, 2, 2]);
        assert_eq!(concat_channels(&refs[..1]).unwrap(), parts[0]);

        let a = Tensor::zeros(Shape::new(vec![2, 1, 3, 3]).unwrap());
        let b = Tensor::zeros(Shape::new(vec![3, 1, 3, 3]).unwrap());
        assert_eq!(concat_channels(&[&a, &b]).unwrap().dims(), &[5, 1, 3, 3]);
        let bad = Tensor::zeros(Shape::new(vec![3, 1, 3, 4]).unwrap());
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    fn small_cthw() -> impl Strategy<Value = Tensor> {
        (1usize..3, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, t, h, w)| {
            proptest::collection::vec(-10f32..10.0, c * t * h * w)
                .prop_map(move |d| Tensor::from_vec([c, t, h, w], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn identity_conv_is_exact(x in small_cthw()) {
            let k = Kernel3Spec::identity(x.channels());
            prop_assert_eq!(conv3d_same(&x, &k).unwrap(), x);
        }

        #[test]
        fn conv_is_linear(x in small_cthw(), seed in 0u64..1000, a in -3f32..3.0, b in -3f32..3.0) {
            let y = x.map(|v| (v * 7.3 + seed as f32).sin() * 5.0);
            let taps: Vec<f32> = (0..27).map(|i| ((i as f32 + seed as f32) * 0.37).cos()).collect();
            let k = Kernel3Spec::depthwise(x.channels(), [3, 3, 3], [1, 2, 1], &taps).unwrap();
            let combo = scalar_affine(&x, a, 0.0).add(&scalar_affine(&y, b, 0.0)).unwrap();
            let lhs = conv3d_same(&combo, &k).unwrap();
            let rhs = scalar_affine(&conv3d_same(&x, &k).unwrap(), a, 0.0)
                .add(&scalar_affine(&conv3d_same(&y, &k).unwrap(), b, 0.0)).unwrap();
            let scale = reduce(&rhs.map(f32::abs), Stat::Max).max(1.0);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-5 * scale);
        }

        #[test]
        fn maxpool_is_monotone(x in small_cthw(), bump in proptest::collection::vec(0f32..2.0, 64)) {
            let y = Tensor::from_vec(
                x.dims().to_vec(),
                x.data().iter().enumerate().map(|(i, v)| v + bump[i % bump.len()]).collect(),
            ).unwrap();
            let (_, t, h, w) = x.shape().cthw().unwrap();
            let win = [t.min(2), h.min(2), w.min(2)];
            let px = maxpool3d(&x, win, [1, 1, 1]).unwrap();
            let py = maxpool3d(&y, win, [1, 1, 1]).unwrap();
            prop_assert!(px.data().iter().zip(py.data()).all(|(a, b)| a <= b));
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            grid in proptest::collection::vec(-50_000i32..50_000, 1..12), shift in -100i32..100
        ) {
            // logits on a 2^-10 grid so adding an integer shift is exact in f32
            let v: Vec<f32> = grid.iter().map(|&g| g as f32 / 1024.0).collect();
            let shift = shift as f32;
            let s = softmax(&v);
            let total: f64 = s.iter().map(|&p| p as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            let shifted: Vec<f32> = v.iter().map(|x| x + shift).collect();
            for (a, b) in s.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn concat_then_slice_recovers_parts(a in small_cthw(), extra in 1usize..3) {
            let mut dims = a.dims().to_vec();
            dims[0] = extra;
            let b = Tensor::from_vec(dims, (0..extra * a.numel() / a.channels()).map(|i| i as f32).collect()).unwrap();
            let cat = concat_channels(&[&a, &b]).unwrap();
            prop_assert_eq!(cat.channel_slice(0, a.channels()).unwrap(), a.clone());
            prop_assert_eq!(cat.channel_slice(a.channels(), a.channels() + extra).unwrap(), b);
        }
    }
}
