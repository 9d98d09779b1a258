//! `dynattn` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Every run prints one
//! summary line to stdout; data goes to files only, and nothing is written
//! unless the whole computation succeeds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dynattn::attention::{datt_fuse, satt_fuse, PointwiseMixer};
use dynattn::bench::{bench_compare, BenchConfig, Method};
use dynattn::heatmap::{build_guidance_pyramid, render_gaussian_map, GaussianMapParams, KeypointSet, StageConfig};
use dynattn::io::{
    bench_csv, genotype_to_json, pgm_to_bytes, read_alpha, read_keypoints, read_pgm_sequence, read_tensor,
    tensor_to_bytes,
};
use dynattn::nas::{discretize, MAX_RETAIN_K};
use dynattn::rankpool::{batch_normalize, minmax_normalize, streaming_dynamic_images, FrameSequence};
use dynattn::{Shape, Tensor};

const BATCH_NORM_EPSILON: f32 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "dynattn",
    version,
    about = "Dynamic images, guidance heatmaps, fusion and cell genotypes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Norm {
    Batch,
    Minmax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FuseMode {
    Datt,
    Satt,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sliding-window dynamic images from a [T, C, H, W] tensor file or a PGM directory
    Dynimg {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, value_enum, default_value_t = Norm::Batch)]
        norm: Norm,
        #[arg(long, default_value_t = 64)]
        refresh: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame Gaussian heatmaps and per-stage guidance tensors
    Heatmap {
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long, default_value_t = 6.0)]
        sigma: f32,
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        stages: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Guidance-gated fusion of a feature tensor
    Fuse {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        guidance: PathBuf,
        #[arg(long, value_enum)]
        mode: FuseMode,
        /// `reference` or a [C, 2C + 1] tensor file (last column is the bias)
        #[arg(long, default_value = "reference")]
        mixer: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discrete cell genotype from architecture logits
    Genotype {
        #[arg(long)]
        alpha: PathBuf,
        #[arg(long, default_value_t = 2)]
        retain_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correctness-gated timing of the three pooling methods
    Bench {
        #[arg(long, default_value_t = 256)]
        frames: usize,
        #[arg(long, default_value_t = 16)]
        window: usize,
        /// Frame shape as CxHxW
        #[arg(long, default_value = "3x64x64", value_parser = parse_shape)]
        shape: Shape,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(dynattn::Error),
}

impl From<dynattn::Error> for CliError {
    fn from(e: dynattn::Error) -> Self {
        CliError::Data(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "data error: {e}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    let dims = s
        .split('x')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad extent {d:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if dims.len() != 3 {
        return Err(format!("expected CxHxW, got {s:?}"));
    }
    Shape::new(dims).map_err(|e| e.to_string())
}

fn dims_label(t: &Tensor) -> String {
    t.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Files to write once every output has been computed.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn push(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    fn len(&self) -> usize {
        self.files.len()
    }

    /// Writes everything; on failure removes whatever was already written.
    fn commit(self) -> Result<(), CliError> {
        let mut written: Vec<&Path> = Vec::new();
        for (path, bytes) in &self.files {
            let result = match path.parent() {
                Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
                _ => Ok(()),
            }
            .and_then(|_| fs::write(path, bytes));
            if let Err(e) = result {
                for p in written {
                    let _ = fs::remove_file(p);
                }
                return Err(dynattn::Error::Io {
                    path: path.clone(),
                    source: e,
                }
                .into());
            }
            written.push(path);
        }
        Ok(())
    }
}

fn load_frames(input: &Path) -> Result<FrameSequence, CliError> {
    if input.is_dir() {
        return Ok(read_pgm_sequence(&[input])?);
    }
    let stacked = read_tensor(input)?;
    if stacked.dims().len() != 4 {
        return Err(dynattn::Error::InvalidShape {
            dims: stacked.dims().to_vec(),
            reason: "input tensor must be [T, C, H, W]".into(),
        }
        .into());
    }
    Ok(FrameSequence::from_stacked(&stacked)?)
}

fn dynimg(
    input: &Path,
    window: usize,
    stride: usize,
    norm: Norm,
    refresh: usize,
    out: &Path,
) -> Result<(Outputs, String), CliError> {
    if window < 2 {
        return Err(usage(format!("--window must be >= 2, got {window}")));
    }
    if stride == 0 || refresh == 0 {
        return Err(usage("--stride and --refresh must be >= 1"));
    }
    let seq = load_frames(input)?;
    if window > seq.len() {
        return Err(usage(format!(
            "--window {window} exceeds the {} input frames",
            seq.len()
        )));
    }
    let dis: Vec<Tensor> = streaming_dynamic_images(&seq, window, refresh)?
        .into_iter()
        .step_by(stride)
        .collect();
    let dis = match norm {
        Norm::None => dis,
        Norm::Minmax => dis.iter().map(|d| minmax_normalize(d).tensor).collect(),
        Norm::Batch => batch_normalize(&dis, 1.0, 0.0, BATCH_NORM_EPSILON)?,
    };
    let (lo, hi) = dis
        .iter()
        .flat_map(|d| d.data())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut outputs = Outputs::default();
    for (i, d) in dis.iter().enumerate() {
        outputs.push(out.join(format!("DI_{:06}.rdt", i + 1)), tensor_to_bytes(d)?);
    }
    let norm_name = format!("{norm:?}").to_lowercase();
    let summary = format!(
        "dynimg: {} outputs, frames={}, window={window}, stride={stride}, norm={norm_name}, min={lo}, max={hi}",
        outputs.len(),
        seq.len()
    );
    Ok((outputs, summary))
}

fn heatmap(
    keypoints: &Path,
    sigma: f32,
    size: usize,
    stages: &[usize],
    out: &Path,
) -> Result<(Outputs, String), CliError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(usage(format!("--sigma must be a positive number, got {sigma}")));
    }
    let mut configs = Vec::with_capacity(stages.len());
    for &s in stages {
        let cfg =
            StageConfig::default_stage(s).ok_or_else(|| usage(format!("unknown stage {s}; stages are 1, 2, 3")))?;
        if size == 0 || !size.is_multiple_of(cfg.height) || !size.is_multiple_of(cfg.width) {
            return Err(usage(format!(
                "--size {size} is not a multiple of stage {s}'s {}x{} grid",
                cfg.height, cfg.width
            )));
        }
        configs.push(cfg);
    }
    let track = read_keypoints(keypoints)?;
    let params = GaussianMapParams {
        sigma,
        ..Default::default()
    };
    let sets: Vec<KeypointSet> = if track.frames.is_empty() {
        vec![KeypointSet::empty(size, size)]
    } else {
        track.frames.iter().map(|f| f.keypoints.resized(size, size)).collect()
    };
    let maps = sets
        .iter()
        .map(|kp| render_gaussian_map(kp, &params))
        .collect::<dynattn::Result<Vec<_>>>()?;
    let mut outputs = Outputs::default();
    for (i, m) in maps.iter().enumerate() {
        outputs.push(out.join(format!("frame_{:06}.pgm", i + 1)), pgm_to_bytes(m)?);
    }
    if !configs.is_empty() {
        let pyramid = build_guidance_pyramid(&maps, &configs)?;
        for (cfg, level) in &pyramid.levels {
            outputs.push(out.join(format!("stage{}.rdt", cfg.stage)), tensor_to_bytes(level)?);
        }
    }
    let stage_list = stages.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    let summary = format!(
        "heatmap: {} outputs, frames={}, size={size}, sigma={sigma}, stages={stage_list}",
        outputs.len(),
        maps.len()
    );
    Ok((outputs, summary))
}

fn fuse(
    features: &Path,
    guidance: &Path,
    mode: FuseMode,
    mixer: &str,
    out: &Path,
) -> Result<(Outputs, String), CliError> {
    let f = read_tensor(features)?;
    let g = read_tensor(guidance)?;
    let mixer_spec = if mixer == "reference" {
        PointwiseMixer::reference(f.channels())
    } else {
        PointwiseMixer::from_tensor(&read_tensor(mixer)?)?
    };
    let fused = match mode {
        FuseMode::Datt => datt_fuse(&f, &g, &mixer_spec)?,
        FuseMode::Satt => satt_fuse(&f, &g, &mixer_spec)?,
    };
    let mut outputs = Outputs::default();
    outputs.push(out.to_path_buf(), tensor_to_bytes(&fused)?);
    let mode_name = format!("{mode:?}").to_lowercase();
    let mixer_name = if mixer_spec.is_reference() { "reference" } else { "file" };
    let summary = format!(
        "fuse: {} outputs, mode={mode_name}, mixer={mixer_name}, shape={}",
        outputs.len(),
        dims_label(&fused)
    );
    Ok((outputs, summary))
}

fn genotype(alpha: &Path, retain_k: usize, out: &Path) -> Result<(Outputs, String), CliError> {
    if !(1..=MAX_RETAIN_K).contains(&retain_k) {
        return Err(usage(format!(
            "--retain-k must be in 1..={MAX_RETAIN_K}, got {retain_k}"
        )));
    }
    let logits = read_alpha(alpha)?;
    let g = discretize(&logits, retain_k)?;
    let edges: usize = g.nodes().iter().map(|n| n.edges.len()).sum();
    let mut outputs = Outputs::default();
    outputs.push(out.to_path_buf(), genotype_to_json(&g).into_bytes());
    let summary = format!(
        "genotype: {} outputs, retain_k={retain_k}, nodes={}, edges={edges}",
        outputs.len(),
        g.nodes().len()
    );
    Ok((outputs, summary))
}

fn bench(
    frames: usize,
    window: usize,
    shape: &Shape,
    repeats: usize,
    seed: u64,
    out: &Path,
) -> Result<(Outputs, String), CliError> {
    let cfg = BenchConfig {
        seed,
        ..BenchConfig::new(frames, window, shape.clone(), repeats)
    };
    let report = bench_compare(&cfg)?;
    let csv = bench_csv(&report);
    let rows = csv.lines().count() - 1;
    let mut outputs = Outputs::default();
    outputs.push(out.to_path_buf(), csv.into_bytes());
    let summary = format!(
        "bench: {} outputs, rows={rows}, windows={}, speedup_weighted={:.2}, speedup_streaming={:.2}",
        outputs.len(),
        report.windows_emitted,
        report.speedup(Method::Weighted),
        report.speedup(Method::Streaming)
    );
    Ok((outputs, summary))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (outputs, summary) = match cli.command {
        Command::Dynimg {
            input,
            window,
            stride,
            norm,
            refresh,
            out,
        } => dynimg(&input, window, stride, norm, refresh, &out)?,
        Command::Heatmap {
            keypoints,
            sigma,
            size,
            stages,
            out,
        } => heatmap(&keypoints, sigma, size, &stages, &out)?,
        Command::Fuse {
            features,
            guidance,
            mode,
            mixer,
            out,
        } => fuse(&features, &guidance, mode, &mixer, &out)?,
        Command::Genotype { alpha, retain_k, out } => genotype(&alpha, retain_k, &out)?,
        Command::Bench {
            frames,
            window,
            shape,
            repeats,
            seed,
            out,
        } => bench(frames, window, &shape, repeats, seed, &out)?,
    };
    outputs.commit()?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dynattn: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Data(_) => 2,
            })
        }
    }
}
