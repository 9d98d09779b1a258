//! Correctness-gated timing of the three dynamic-image routes.

use std::fmt;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::rankpool::{
    rank_pool_pairwise, rank_pool_weighted, streaming_dynamic_images, FrameSequence, DEFAULT_REFRESH_PERIOD,
};
use crate::tensor::{Shape, Tensor};

pub const AGREEMENT_REL: f64 = 1e-4;
pub const AGREEMENT_ABS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pairwise,
    Weighted,
    Streaming,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pairwise, Method::Weighted, Method::Streaming];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pairwise => "pairwise",
            Method::Weighted => "weighted",
            Method::Streaming => "streaming",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct MethodTiming {
    pub method: Method,
    /// Wall seconds, one entry per repeat.
    pub samples: Vec<f64>,
}

impl MethodTiming {
    pub fn min_seconds(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub frames: usize,
    pub window: usize,
    pub frame_shape: Shape,
    pub repeats: usize,
    pub windows_emitted: usize,
    pub timings: Vec<MethodTiming>,
}

impl BenchReport {
    pub fn timing(&self, method: Method) -> &MethodTiming {
        self.timings
            .iter()
            .find(|t| t.method == method)
            .expect("every method is timed")
    }

    /// Min-of-repeats pairwise time over min-of-repeats `method` time.
    pub fn speedup(&self, method: Method) -> f64 {
        self.timing(Method::Pairwise).min_seconds() / self.timing(method).min_seconds()
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub frames: usize,
    pub window: usize,
    pub frame_shape: Shape,
    pub repeats: usize,
    pub seed: u64,
    pub refresh_period: usize,
}

impl BenchConfig {
    pub fn new(frames: usize, window: usize, frame_shape: Shape, repeats: usize) -> Self {
        BenchConfig {
            frames,
            window,
            frame_shape,
            repeats,
            seed: 0,
            refresh_period: DEFAULT_REFRESH_PERIOD,
        }
    }
}

/// Uniform values in `[-10, 10]`.
pub fn synthetic_stream(frames: usize, frame_shape: &Shape, seed: u64) -> Result<FrameSequence> {
    let mut rng = StdRng::seed_from_u64(seed);
    let seq = (0..frames)
        .map(|_| {
            let data = (0..frame_shape.numel())
                .map(|_| rng.gen_range(-10.0f32..=10.0))
                .collect();
            Tensor::new(frame_shape.clone(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(seq)
}

fn per_window(seq: &FrameSequence, window: usize, pool: fn(&FrameSequence) -> Result<Tensor>) -> Result<Vec<Tensor>> {
    (0..=seq.len() - window)
        .map(|start| pool(&seq.window(start, window)?))
        .collect()
}

fn run(method: Method, seq: &FrameSequence, cfg: &BenchConfig) -> Result<Vec<Tensor>> {
    match method {
        Method::Pairwise => per_window(seq, cfg.window, rank_pool_pairwise),
        Method::Weighted => per_window(seq, cfg.window, rank_pool_weighted),
        Method::Streaming => streaming_dynamic_images(seq, cfg.window, cfg.refresh_period),
    }
}

fn check_agreement(method: Method, got: &[Tensor], oracle: &[Tensor]) -> Result<()> {
    if got.len() != oracle.len() {
        return Err(Error::invalid(
            "bench_compare",
            format!("{method} emitted {} windows, oracle {}", got.len(), oracle.len()),
        ));
    }
    for (i, (g, o)) in got.iter().zip(oracle).enumerate() {
        if !g.approx_eq(o, AGREEMENT_REL, AGREEMENT_ABS) {
            return Err(Error::Disagreement {
                method: method.name(),
                window: i,
                max_abs_diff: g.max_abs_diff(o)?,
            });
        }
    }
    Ok(())
}

/// Times every method on one synthetic stream. Each repeat's outputs are
/// checked against the pairwise oracle; any disagreement aborts the run.
pub fn bench_compare(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.window < 2 || cfg.frames <= cfg.window {
        return Err(Error::invalid(
            "bench_compare",
            format!(
                "need frames > window >= 2, got frames={} window={}",
                cfg.frames, cfg.window
            ),
        ));
    }
    if cfg.repeats == 0 {
        return Err(Error::invalid("bench_compare", "repeats must be >= 1"));
    }
    let seq = synthetic_stream(cfg.frames, &cfg.frame_shape, cfg.seed)?;
    let mut timings: Vec<MethodTiming> = Method::ALL
        .iter()
        .map(|&method| MethodTiming {
            method,
            samples: Vec::with_capacity(cfg.repeats),
        })
        .collect();
    let mut windows_emitted = 0;
    for _ in 0..cfg.repeats {
        let mut outputs = Vec::with_capacity(Method::ALL.len());
        for timing in timings.iter_mut() {
            let start = Instant::now();
            let out = run(timing.method, &seq, cfg)?;
            timing.samples.push(start.elapsed().as_secs_f64());
            outputs.push(out);
        }
        let oracle = &outputs[0];
        for (method, out) in Method::ALL.iter().zip(&outputs).skip(1) {
            check_agreement(*method, out, oracle)?;
        }
        windows_emitted = oracle.len();
    }
    Ok(BenchReport {
        frames: cfg.frames,
        window: cfg.window,
        frame_shape: cfg.frame_shape.clone(),
        repeats: cfg.repeats,
        windows_emitted,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(frames: usize, window: usize, repeats: usize) -> BenchConfig {
        BenchConfig::new(frames, window, Shape::new(vec![2, 3, 3]).unwrap(), repeats)
    }

    #[test]
    fn one_extra_frame_emits_two_windows() {
        let r = bench_compare(&small(9, 8, 1)).unwrap();
        assert_eq!(r.windows_emitted, 2);
    }

    #[test]
    fn repeats_are_all_recorded() {
        let r = bench_compare(&small(20, 4, 3)).unwrap();
        for t in &r.timings {
            assert_eq!(t.samples.len(), 3);
            assert_eq!(t.min_seconds(), t.samples.iter().copied().fold(f64::INFINITY, f64::min));
        }
        assert!(r.speedup(Method::Streaming) > 0.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(bench_compare(&small(8, 8, 1)).is_err());
        assert!(bench_compare(&small(8, 1, 1)).is_err());
        assert!(bench_compare(&small(8, 4, 0)).is_err());
    }

    #[test]
    fn disagreement_is_an_error() {
        let oracle = vec![Tensor::from_vec([1], vec![1.0]).unwrap()];
        let wrong = vec![Tensor::from_vec([1], vec![1.01]).unwrap()];
        assert!(matches!(
            check_agreement(Method::Streaming, &wrong, &oracle),
            Err(Error::Disagreement { window: 0, .. })
        ));
        assert!(check_agreement(Method::Streaming, &oracle, &oracle).is_ok());
    }
}
