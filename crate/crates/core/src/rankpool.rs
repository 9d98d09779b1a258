//! Dynamic images by approximate rank pooling.
//!
//! Three routes compute the same quantity for a window of `T` frames
//! `V_1..V_T` (1-based in the math, 0-based in storage):
//!
//! * [`rank_pool_pairwise`]: `Σ_{t1 > t2} (V_t1 − V_t2)`, O(T²) per window.
//! * [`rank_pool_weighted`]: `Σ_t β_t V_t` with `β_t = 2t − T − 1`, O(T).
//! * [`StreamingPooler`]: slides a window of fixed length by one frame in
//!   O(1) tensor operations per step.
//!
//! Sliding from window `n..=m` to `n+1..=m+1` expands to
//!
//! ```text
//! DI(n+1, m+1) = DI(n, m) + (m − n)·(V_n + V_{m+1}) − 2·Σ_{l=n+1..=m} V_l
//! ```
//!
//! Dropping `V_n` removes the `m − n` pairs `(V_l − V_n)`; appending
//! `V_{m+1}` adds the `m − n` pairs `(V_{m+1} − V_l)`. Both frames therefore
//! carry the coefficient `m − n`. A recurrence with coefficient 1 on
//! `V_{m+1}` disagrees with the pairwise sum for every window longer than 2.

use crate::error::{Error, Result};
use crate::tensor::{reduce, Shape, Stat, Tensor};

/// Ordered frames of identical shape, typically `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Tensor>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("FrameSequence", "sequence is empty"))?;
        for f in &frames[1..] {
            first.check_same_shape(f, "FrameSequence")?;
        }
        Ok(FrameSequence { frames })
    }

    /// Splits a `[T, ...]` tensor into `T` frames.
    pub fn from_stacked(stacked: &Tensor) -> Result<Self> {
        let dims = stacked.dims();
        if dims.len() < 2 {
            return Err(Error::invalid(
                "FrameSequence",
                format!("stacked tensor {} needs a leading time axis", stacked.shape()),
            ));
        }
        let frame_dims = dims[1..].to_vec();
        let n = stacked.numel() / dims[0];
        let frames = stacked
            .data()
            .chunks_exact(n)
            .map(|c| Tensor::from_vec(frame_dims.clone(), c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn frame_shape(&self) -> &Shape {
        self.frames[0].shape()
    }

    pub fn window(&self, start: usize, len: usize) -> Result<FrameSequence> {
        if len == 0 || start + len > self.len() {
            return Err(Error::invalid(
                "FrameSequence::window",
                format!("window {start}..{} outside 0..{}", start + len, self.len()),
            ));
        }
        Ok(FrameSequence {
            frames: self.frames[start..start + len].to_vec(),
        })
    }

    pub fn reversed(&self) -> FrameSequence {
        FrameSequence {
            frames: self.frames.iter().rev().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankCoefficients {
    beta: Vec<i64>,
}

impl RankCoefficients {
    pub fn window(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[i64] {
        &self.beta
    }
}

/// `β_t = 2t − T − 1` for `t = 1..=T`.
pub fn beta_coefficients(window: usize) -> Result<RankCoefficients> {
    if window < 2 {
        return Err(Error::invalid(
            "beta_coefficients",
            format!("window length {window} < 2; a dynamic image needs at least two frames"),
        ));
    }
    let t = window as i64;
    Ok(RankCoefficients {
        beta: (1..=t).map(|i| 2 * i - t - 1).collect(),
    })
}

fn require_pair(seq: &FrameSequence, op: &'static str) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::invalid(op, "need at least two frames"));
    }
    Ok(())
}

fn to_tensor(shape: &Shape, acc: &[f64]) -> Tensor {
    Tensor::new(shape.clone(), acc.iter().map(|&v| v as f32).collect()).expect("accumulator sized from shape")
}

/// Brute-force sum over all ordered frame pairs.
pub fn rank_pool_pairwise(seq: &FrameSequence) -> Result<Tensor> {
    require_pair(seq, "rank_pool_pairwise")?;
    let frames = seq.frames();
    let mut acc = vec![0.0f64; frames[0].numel()];
    for (t1, later) in frames.iter().enumerate() {
        for earlier in &frames[..t1] {
            for ((a, &x), &y) in acc.iter_mut().zip(later.data()).zip(earlier.data()) {
                *a += x as f64 - y as f64;
            }
        }
    }
    Ok(to_tensor(seq.frame_shape(), &acc))
}

pub fn rank_pool_weighted(seq: &FrameSequence) -> Result<Tensor> {
    require_pair(seq, "rank_pool_weighted")?;
    let coeffs = beta_coefficients(seq.len())?;
    Ok(to_tensor(
        seq.frame_shape(),
        &weighted_sum(seq.frames().iter(), &coeffs),
    ))
}

fn weighted_sum<'a>(frames: impl Iterator<Item = &'a Tensor>, coeffs: &RankCoefficients) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for (frame, &b) in frames.zip(coeffs.beta()) {
        if acc.is_empty() {
            acc = vec![0.0; frame.numel()];
        }
        if b == 0 {
            continue;
        }
        let b = b as f64;
        for (a, &x) in acc.iter_mut().zip(frame.data()) {
            *a += b * x as f64;
        }
    }
    acc
}

/// Counts scalar arithmetic performed through it.
#[derive(Debug, Default, Clone, Copy)]
struct OpTally(u64);

impl OpTally {
    #[inline(always)]
    fn add(&mut self, a: f64, b: f64) -> f64 {
        self.0 += 1;
        a + b
    }

    #[inline(always)]
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        self.0 += 1;
        a - b
    }

    #[inline(always)]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.0 += 1;
        a * b
    }
}

pub const DEFAULT_REFRESH_PERIOD: usize = 64;

/// Sliding-window dynamic image with O(1) tensor work per frame.
///
/// Holds the `W` most recent frames in a ring, the sum of the `W − 2`
/// interior frames, and the current dynamic image. Sums are kept in `f64`;
/// every `refresh_period` emitted windows both are recomputed exactly from
/// the ring.
#[derive(Debug, Clone)]
pub struct StreamingPooler {
    window: usize,
    frame_shape: Shape,
    ring: Vec<Tensor>,
    head: usize,
    interior_sum: Vec<f64>,
    current_di: Vec<f64>,
    windows_emitted: u64,
    refresh_period: usize,
    last_step_ops: u64,
    refresh_ops: u64,
}

impl StreamingPooler {
    /// Initializes from the first full window; the first window's dynamic
    /// image counts as emitted.
    pub fn new(first_window: FrameSequence, refresh_period: usize) -> Result<Self> {
        require_pair(&first_window, "streaming_init")?;
        if refresh_period == 0 {
            return Err(Error::invalid("streaming_init", "refresh_period must be >= 1"));
        }
        let window = first_window.len();
        let frame_shape = first_window.frame_shape().clone();
        let mut state = StreamingPooler {
            window,
            frame_shape,
            ring: first_window.frames,
            head: 0,
            interior_sum: Vec::new(),
            current_di: Vec::new(),
            windows_emitted: 1,
            refresh_period,
            last_step_ops: 0,
            refresh_ops: 0,
        };
        state.recompute();
        Ok(state)
    }

    /// Like [`StreamingPooler::new`], additionally checking the window length.
    pub fn with_window(first_window: FrameSequence, window: usize, refresh_period: usize) -> Result<Self> {
        if first_window.len() != window {
            return Err(Error::invalid(
                "streaming_init",
                format!("expected {window} frames, got {}", first_window.len()),
            ));
        }
        StreamingPooler::new(first_window, refresh_period)
    }

    /// Ring contents, oldest first.
    fn ordered(&self) -> impl Iterator<Item = &Tensor> {
        self.ring[self.head..].iter().chain(&self.ring[..self.head])
    }

    fn recompute(&mut self) {
        let n = self.frame_shape.numel();
        let coeffs = beta_coefficients(self.window).expect("window >= 2");
        let di = weighted_sum(self.ordered(), &coeffs);
        let mut interior = vec![0.0f64; n];
        for frame in self.ordered().skip(1).take(self.window - 2) {
            for (s, &x) in interior.iter_mut().zip(frame.data()) {
                *s += x as f64;
            }
        }
        self.current_di = di;
        self.interior_sum = interior;
        self.refresh_ops = (self.window as u64 * 2 + self.window.saturating_sub(2) as u64) * n as u64;
    }

    /// Consumes the next frame and returns the dynamic image of the window
    /// ending at it.
    pub fn step(&mut self, next: &Tensor) -> Result<Tensor> {
        if next.shape() != &self.frame_shape {
            return Err(Error::ShapeMismatch {
                op: "streaming_step",
                left: self.frame_shape.clone(),
                right: next.shape().clone(),
            });
        }
        let span = (self.window - 1) as f64;
        let w = self.window;
        let ring = &self.ring;
        let oldest = ring[self.head].data();
        let second = ring[(self.head + 1) % w].data();
        let newest = ring[(self.head + w - 1) % w].data();
        let mut ops = OpTally::default();
        for (i, (di, interior)) in self.current_di.iter_mut().zip(self.interior_sum.iter_mut()).enumerate() {
            let (x_old, x_second, x_last, x_next) = (
                oldest[i] as f64,
                second[i] as f64,
                newest[i] as f64,
                next.data()[i] as f64,
            );
            // frames n+1..=m are the interior plus the current newest frame
            let overlap = ops.add(*interior, x_last);
            let ends = ops.add(x_old, x_next);
            let ends = ops.mul(span, ends);
            let twice_overlap = ops.mul(2.0, overlap);
            let delta = ops.sub(ends, twice_overlap);
            *di = ops.add(*di, delta);
            let shift = ops.sub(x_last, x_second);
            *interior = ops.add(*interior, shift);
        }
        self.ring[self.head] = next.clone();
        self.head = (self.head + 1) % self.window;
        self.windows_emitted += 1;
        self.last_step_ops = ops.0;
        if self.windows_emitted.is_multiple_of(self.refresh_period as u64) {
            self.recompute();
        }
        Ok(self.current_di())
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn frame_shape(&self) -> &Shape {
        &self.frame_shape
    }

    pub fn current_di(&self) -> Tensor {
        to_tensor(&self.frame_shape, &self.current_di)
    }

    pub fn interior_sum(&self) -> Tensor {
        to_tensor(&self.frame_shape, &self.interior_sum)
    }

    /// Frames currently in the window, oldest first.
    pub fn ring_contents(&self) -> FrameSequence {
        FrameSequence {
            frames: self.ordered().cloned().collect(),
        }
    }

    pub fn windows_emitted(&self) -> u64 {
        self.windows_emitted
    }

    pub fn refresh_period(&self) -> usize {
        self.refresh_period
    }

    /// Scalar arithmetic operations performed by the incremental update of
    /// the most recent [`step`](Self::step), excluding any refresh.
    pub fn last_step_ops(&self) -> u64 {
        self.last_step_ops
    }

    /// Scalar operations of the most recent exact recomputation.
    pub fn refresh_ops(&self) -> u64 {
        self.refresh_ops
    }
}

/// Every stride-1 window of `seq` through the streaming pooler.
pub fn streaming_dynamic_images(seq: &FrameSequence, window: usize, refresh_period: usize) -> Result<Vec<Tensor>> {
    if window < 2 || window > seq.len() {
        return Err(Error::invalid(
            "streaming_dynamic_images",
            format!("window {window} must satisfy 2 <= window <= {}", seq.len()),
        ));
    }
    let mut pooler = StreamingPooler::new(seq.window(0, window)?, refresh_period)?;
    let mut out = Vec::with_capacity(seq.len() - window + 1);
    out.push(pooler.current_di());
    for frame in &seq.frames()[window..] {
        out.push(pooler.step(frame)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxNormalized {
    pub tensor: Tensor,
    /// Set when max == min; the tensor is then all zeros.
    pub degenerate: bool,
}

pub fn minmax_normalize(di: &Tensor) -> MinMaxNormalized {
    let lo = reduce(di, Stat::Min);
    let hi = reduce(di, Stat::Max);
    if hi <= lo {
        return MinMaxNormalized {
            tensor: di.zeros_like(),
            degenerate: true,
        };
    }
    let range = hi - lo;
    MinMaxNormalized {
        tensor: di.map(|x| (((x as f64 - lo) / range) as f32).clamp(0.0, 1.0)),
        degenerate: false,
    }
}

/// Per-channel normalization over the batch and every non-channel axis.
/// Axis 0 of each tensor is the channel axis.
pub fn batch_normalize(dis: &[Tensor], gamma: f32, beta_shift: f32, epsilon: f32) -> Result<Vec<Tensor>> {
    let first = dis
        .first()
        .ok_or_else(|| Error::invalid("batch_normalize", "batch is empty"))?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid(
            "batch_normalize",
            format!("epsilon {epsilon} must be > 0"),
        ));
    }
    for d in &dis[1..] {
        first.check_same_shape(d, "batch_normalize")?;
    }
    let c = first.channels();
    let plane = first.numel() / c;
    let count = (plane * dis.len()) as f64;
    let mut mean = vec![0.0f64; c];
    for d in dis {
        for (ch, chunk) in d.data().chunks_exact(plane).enumerate() {
            mean[ch] += chunk.iter().map(|&x| x as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for d in dis {
        for (ch, chunk) in d.data().chunks_exact(plane).enumerate() {
            var[ch] += chunk.iter().map(|&x| (x as f64 - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| gamma as f64 / (v / count + epsilon as f64).sqrt())
        .collect();
    dis.iter()
        .map(|d| {
            let data = d
                .data()
                .chunks_exact(plane)
                .enumerate()
                .flat_map(|(ch, chunk)| {
                    let (m, s) = (mean[ch], scale[ch]);
                    chunk
                        .iter()
                        .map(move |&x| ((x as f64 - m) * s + beta_shift as f64) as f32)
                })
                .collect();
            Tensor::new(d.shape().clone(), data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(values: &[f32]) -> FrameSequence {
        FrameSequence::new(
            values
                .iter()
                .map(|&v| Tensor::from_vec([1, 1, 1], vec![v]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn scalar(t: &Tensor) -> f32 {
        t.data()[0]
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_coefficients(2).unwrap().beta(), &[-1, 1]);
        assert_eq!(beta_coefficients(3).unwrap().beta(), &[-2, 0, 2]);
        assert_eq!(beta_coefficients(4).unwrap().beta(), &[-3, -1, 1, 3]);
        assert!(beta_coefficients(1).is_err());
        assert!(beta_coefficients(0).is_err());
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(scalar(&rank_pool_pairwise(&pixels(&[1., 4., 2.])).unwrap()), 2.0);
        assert_eq!(scalar(&rank_pool_pairwise(&pixels(&[3., 3., 3., 3.])).unwrap()), 0.0);
        assert!(rank_pool_pairwise(&pixels(&[1.])).is_err());
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(scalar(&rank_pool_weighted(&pixels(&[1., 4., 2.])).unwrap()), 2.0);
        assert_eq!(scalar(&rank_pool_weighted(&pixels(&[11., 14., 12.])).unwrap()), 2.0);
        assert_eq!(scalar(&rank_pool_weighted(&pixels(&[2., 4., 1.])).unwrap()), -2.0);
        assert!(rank_pool_weighted(&pixels(&[1.])).is_err());
    }

    #[test]
    fn streaming_init_examples() {
        let s = StreamingPooler::new(pixels(&[5., 9.]), 64).unwrap();
        assert_eq!(scalar(&s.current_di()), 4.0);
        assert_eq!(scalar(&s.interior_sum()), 0.0);

        let s = StreamingPooler::new(pixels(&[1., 4., 2.]), 64).unwrap();
        assert_eq!(scalar(&s.current_di()), 2.0);
        assert_eq!(scalar(&s.interior_sum()), 4.0);

        let s = StreamingPooler::new(pixels(&[7.; 5]), 64).unwrap();
        assert_eq!(scalar(&s.current_di()), 0.0);

        assert!(StreamingPooler::with_window(pixels(&[1., 2., 3.]), 4, 64).is_err());
        assert!(StreamingPooler::new(pixels(&[1., 2.]), 0).is_err());
    }

    #[test]
    fn streaming_step_examples() {
        let mut s = StreamingPooler::new(pixels(&[1., 4., 2.]), 1_000_000).unwrap();
        let di = s.step(&Tensor::from_vec([1, 1, 1], vec![7.]).unwrap()).unwrap();
        assert_eq!(scalar(&di), 6.0);
        assert_eq!(scalar(&s.interior_sum()), 2.0);
        assert_eq!(s.windows_emitted(), 2);

        let mut s = StreamingPooler::new(pixels(&[3., 8.]), 64).unwrap();
        let di = s.step(&Tensor::from_vec([1, 1, 1], vec![-1.]).unwrap()).unwrap();
        assert_eq!(scalar(&di), -9.0);

        let out = streaming_dynamic_images(&pixels(&[2.5; 10]), 4, 3).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|d| scalar(d) == 0.0));
    }

    #[test]
    fn streaming_rejects_wrong_frame_shape() {
        let mut s = StreamingPooler::new(pixels(&[1., 2.]), 64).unwrap();
        let bad = Tensor::from_vec([1, 1, 2], vec![0., 0.]).unwrap();
        assert!(matches!(s.step(&bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn step_op_count_does_not_depend_on_window() {
        let frame = Tensor::from_vec([2, 3, 3], (0..18).map(|i| i as f32).collect()).unwrap();
        let counts: Vec<u64> = [2, 3, 8, 16]
            .iter()
            .map(|&w| {
                let seq = FrameSequence::new(vec![frame.clone(); w]).unwrap();
                let mut s = StreamingPooler::new(seq, usize::MAX).unwrap();
                s.step(&frame).unwrap();
                s.last_step_ops()
            })
            .collect();
        assert!(counts.iter().all(|&c| c == counts[0]));
        assert_eq!(counts[0], 8 * 18);
    }

    #[test]
    fn minmax_examples() {
        let n = minmax_normalize(&Tensor::from_vec([2], vec![2., 6.]).unwrap());
        assert_eq!(n.tensor.data(), &[0., 1.]);
        assert!(!n.degenerate);
        let n = minmax_normalize(&Tensor::from_vec([3], vec![0., 0.5, 1.]).unwrap());
        assert_eq!(n.tensor.data(), &[0., 0.5, 1.]);
        let n = minmax_normalize(&Tensor::from_vec([3], vec![4., 4., 4.]).unwrap());
        assert!(n.degenerate);
        assert_eq!(n.tensor.data(), &[0., 0., 0.]);
    }

    #[test]
    fn batch_norm_examples() {
        let dis: Vec<Tensor> = (0..4)
            .map(|i| Tensor::from_vec([2, 2, 2], (0..8).map(|j| (i * 8 + j * j) as f32 * 0.3 - 1.0).collect()).unwrap())
            .collect();
        let out = batch_normalize(&dis, 1.0, 0.0, 1e-8).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = out
                .iter()
                .flat_map(|t| t.data()[ch * 4..ch * 4 + 4].iter().map(|&x| x as f64))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
        }

        let constant = vec![Tensor::full(Shape::new(vec![3, 2]).unwrap(), 5.0); 3];
        for t in batch_normalize(&constant, 2.0, 0.75, 1e-5).unwrap() {
            assert!(t.data().iter().all(|&x| x == 0.75));
        }

        let single = Tensor::from_vec([3], vec![1.5, -7.0, 100.0]).unwrap();
        let out = batch_normalize(&[single], 1.0, 0.0, 1e-5).unwrap();
        assert!(out[0].data().iter().all(|x| x.abs() < 1e-6));

        assert!(batch_normalize(&[], 1.0, 0.0, 1e-5).is_err());
        let one = Tensor::from_vec([1], vec![0.]).unwrap();
        assert!(batch_normalize(std::slice::from_ref(&one), 1.0, 0.0, 0.0).is_err());
    }
}
