//! File formats.
//!
//! * Tensor container: `"RDT1"`, `ndim: u32`, `ndim × u32` extents, then the
//!   row-major `f32` payload; every integer and float little-endian.
//! * Binary PGM (`P5`, maxval 255) for single-channel frames and heatmaps.
//! * JSON for keypoints, architecture logits and genotypes.
//! * CSV for benchmark reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{BenchReport, Method};
use crate::error::{Error, Result};
use crate::heatmap::{Keypoint, KeypointSet};
use crate::nas::{AlphaMatrix, CellSpec, Genotype, GenotypeEdge, GenotypeNode, OpKind, NUM_OPS};
use crate::rankpool::FrameSequence;
use crate::tensor::{Shape, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"RDT1";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    let ndim = u32::try_from(dims.len())
        .map_err(|_| Error::invalid("write_tensor", format!("rank {} exceeds u32", dims.len())))?;
    out.extend_from_slice(&ndim.to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("write_tensor", format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Reads `count` bytes at `offset`, or reports how many are missing.
fn take(bytes: &[u8], offset: u64, count: u64) -> Result<&[u8]> {
    let available = (bytes.len() as u64).saturating_sub(offset);
    if count > available {
        return Err(Error::Truncated {
            offset,
            needed: count,
            available,
        });
    }
    Ok(&bytes[offset as usize..(offset + count) as usize])
}

fn u32_at(bytes: &[u8], offset: u64) -> Result<u32> {
    let b = take(bytes, offset, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let magic = take(bytes, 0, 4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let ndim = u32_at(bytes, 4)? as u64;
    if ndim == 0 {
        return Err(Error::InvalidHeader {
            offset: 4,
            reason: "ndim is 0".into(),
        });
    }
    // check the whole extent table is present before reading any of it
    take(bytes, 8, 4 * ndim)?;
    let mut dims = Vec::with_capacity(ndim as usize);
    let mut count: u64 = 1;
    for i in 0..ndim {
        let offset = 8 + 4 * i;
        let d = u32_at(bytes, offset)?;
        if d == 0 {
            return Err(Error::InvalidHeader {
                offset,
                reason: format!("extent {i} is 0"),
            });
        }
        count = count.checked_mul(d as u64).ok_or_else(|| Error::InvalidHeader {
            offset,
            reason: "element count overflows u64".into(),
        })?;
        dims.push(d as usize);
    }
    let payload_offset = 8 + 4 * ndim;
    let payload_len = count.checked_mul(4).ok_or_else(|| Error::InvalidHeader {
        offset: payload_offset,
        reason: "payload size overflows u64".into(),
    })?;
    let payload = take(bytes, payload_offset, payload_len)?;
    let end = payload_offset + payload_len;
    if (bytes.len() as u64) != end {
        return Err(Error::InvalidHeader {
            offset: end,
            reason: format!("{} trailing bytes after payload", bytes.len() as u64 - end),
        });
    }
    let shape = Shape::new(dims).map_err(|e| Error::InvalidHeader {
        offset: 8,
        reason: e.to_string(),
    })?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_file(path.as_ref(), &tensor_to_bytes(t)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    tensor_from_bytes(&read_file(path.as_ref())?)
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat(format!("PGM {what} missing at byte {start}")))
    }
}

/// Decodes a binary PGM into `[1, H, W]` with values `v / 255`.
pub fn pgm_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") => return Err(Error::UnsupportedFormat("ASCII PGM (P2) is not supported".into())),
        _ => return Err(Error::UnsupportedFormat("not a binary PGM (P5)".into())),
    }
    let mut cur = PgmCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval}, only 255 is supported"
        )));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::UnsupportedFormat(
            "PGM header not terminated by whitespace".into(),
        ));
    }
    let start = cur.pos + 1;
    let count = width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::UnsupportedFormat(format!("PGM size {width}x{height} is invalid")))?;
    let pixels = take(bytes, start as u64, count as u64)?;
    Tensor::from_vec([1, height, width], pixels.iter().map(|&p| p as f32 / 255.0).collect())
}

/// Encodes `[1, H, W]` (or `[H, W]`) as P5 with `round(clamp(r, 0, 1) · 255)`.
pub fn pgm_to_bytes(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *map.dims() {
        [1, h, w] | [h, w] => (h, w),
        _ => {
            return Err(Error::invalid(
                "write_pgm",
                format!("expected [1, H, W] or [H, W], got {}", map.shape()),
            ))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&r| {
        let r = if r.is_nan() { 0.0 } else { r };
        (r.clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    pgm_from_bytes(&read_file(path.as_ref())?)
}

pub fn write_pgm(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    write_file(path.as_ref(), &pgm_to_bytes(map)?)
}

/// `*.pgm` files of a directory in lexicographic name order.
pub fn pgm_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Frames `[1, H, W]` from a directory of PGMs or an explicit file list.
pub fn read_pgm_sequence<P: AsRef<Path>>(paths: &[P]) -> Result<FrameSequence> {
    let files: Vec<PathBuf> = match paths {
        [single] if single.as_ref().is_dir() => pgm_files(single)?,
        _ => paths.iter().map(|p| p.as_ref().to_path_buf()).collect(),
    };
    if files.is_empty() {
        return Err(Error::invalid("read_pgm_sequence", "no PGM frames found"));
    }
    FrameSequence::new(files.iter().map(read_pgm).collect::<Result<Vec<_>>>()?)
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::json(
            path,
            format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        )
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointJson {
    x: f32,
    y: f32,
    conf: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameJson {
    t: i64,
    points: Vec<PointJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KeypointFileJson {
    width: usize,
    height: usize,
    frames: Vec<FrameJson>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub t: i64,
    pub keypoints: KeypointSet,
}

/// Per-frame keypoints on a `width × height` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrack {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<KeypointFrame>,
}

pub fn keypoints_from_json(text: &str) -> Result<KeypointTrack> {
    let file: KeypointFileJson = parse_json(text)?;
    if file.width == 0 || file.height == 0 {
        return Err(Error::json(
            "width",
            format!("raster {}x{} is empty", file.width, file.height),
        ));
    }
    let mut frames = Vec::with_capacity(file.frames.len());
    let mut prev_t: Option<i64> = None;
    for (i, f) in file.frames.into_iter().enumerate() {
        if prev_t.is_some_and(|p| f.t <= p) {
            return Err(Error::json(
                format!("frames[{i}].t"),
                "frame indices must be strictly increasing",
            ));
        }
        prev_t = Some(f.t);
        let mut points = Vec::with_capacity(f.points.len());
        for (j, p) in f.points.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&p.conf) {
                return Err(Error::json(
                    format!("frames[{i}].points[{j}].conf"),
                    format!("{} outside [0, 1]", p.conf),
                ));
            }
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::json(
                    format!("frames[{i}].points[{j}]"),
                    "coordinates must be finite",
                ));
            }
            points.push(Keypoint {
                x: p.x,
                y: p.y,
                confidence: p.conf,
            });
        }
        frames.push(KeypointFrame {
            t: f.t,
            keypoints: KeypointSet {
                points,
                width: file.width,
                height: file.height,
            },
        });
    }
    Ok(KeypointTrack {
        width: file.width,
        height: file.height,
        frames,
    })
}

pub fn keypoints_to_json(track: &KeypointTrack) -> String {
    let file = KeypointFileJson {
        width: track.width,
        height: track.height,
        frames: track
            .frames
            .iter()
            .map(|f| FrameJson {
                t: f.t,
                points: f
                    .keypoints
                    .points
                    .iter()
                    .map(|p| PointJson {
                        x: p.x,
                        y: p.y,
                        conf: p.confidence,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("keypoints serialize")
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointTrack> {
    keypoints_from_json(&read_text(path.as_ref())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
struct OpName(OpKind);

impl TryFrom<String> for OpName {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse().map(OpName)
    }
}

impl From<OpName> for String {
    fn from(op: OpName) -> String {
        op.0.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeJson {
    from: usize,
    op: OpName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeJson {
    node: usize,
    edges: Vec<EdgeJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenotypeJson {
    retain_k: usize,
    nodes: Vec<NodeJson>,
}

/// Parses genotype JSON. `"zero"` is accepted by the parser but rejected
/// when the genotype is constructed.
pub fn genotype_from_json(text: &str) -> Result<Genotype> {
    let file: GenotypeJson = parse_json(text)?;
    let nodes = file
        .nodes
        .into_iter()
        .map(|n| GenotypeNode {
            node: n.node,
            edges: n
                .edges
                .into_iter()
                .map(|e| GenotypeEdge {
                    from: e.from,
                    op: e.op.0,
                })
                .collect(),
        })
        .collect();
    Genotype::new(file.retain_k, nodes).map_err(|e| Error::json("nodes", e.to_string()))
}

/// Canonical pretty-printed form; byte-stable across parse/serialize.
pub fn genotype_to_json(g: &Genotype) -> String {
    let file = GenotypeJson {
        retain_k: g.retain_k(),
        nodes: g
            .nodes()
            .iter()
            .map(|n| NodeJson {
                node: n.node,
                edges: n
                    .edges
                    .iter()
                    .map(|e| EdgeJson {
                        from: e.from,
                        op: OpName(e.op),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("genotype serializes");
    s.push('\n');
    s
}

pub fn read_genotype(path: impl AsRef<Path>) -> Result<Genotype> {
    genotype_from_json(&read_text(path.as_ref())?)
}

pub fn write_genotype(path: impl AsRef<Path>, g: &Genotype) -> Result<()> {
    write_file(path.as_ref(), genotype_to_json(g).as_bytes())
}

/// Serializes and parses back.
pub fn genotype_roundtrip(g: &Genotype) -> Result<Genotype> {
    genotype_from_json(&genotype_to_json(g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaEdgeJson {
    from: usize,
    to: usize,
    logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaJson {
    edges: Vec<AlphaEdgeJson>,
}

/// `{"edges": [{"from": i, "to": j, "logits": [7 reals]}, ...]}`, one entry
/// per cell edge in any order; logits follow [`OpKind::ALL`] order.
pub fn alpha_from_json(text: &str) -> Result<AlphaMatrix> {
    let file: AlphaJson = parse_json(text)?;
    let mut rows: Vec<Option<[f32; NUM_OPS]>> = vec![None; CellSpec::NUM_EDGES];
    for (k, e) in file.edges.iter().enumerate() {
        let at = format!("edges[{k}]");
        let idx = CellSpec::edge_index(e.from, e.to)
            .ok_or_else(|| Error::json(&at, format!("{} -> {} is not a cell edge", e.from, e.to)))?;
        let row: [f32; NUM_OPS] = e.logits.as_slice().try_into().map_err(|_| {
            Error::json(
                format!("{at}.logits"),
                format!("expected {NUM_OPS} logits, got {}", e.logits.len()),
            )
        })?;
        if rows[idx].replace(row).is_some() {
            return Err(Error::json(&at, format!("edge {} -> {} listed twice", e.from, e.to)));
        }
    }
    let rows = rows
        .into_iter()
        .zip(CellSpec::edges())
        .map(|(r, (i, j))| r.ok_or_else(|| Error::json("edges", format!("edge {i} -> {j} missing"))))
        .collect::<Result<Vec<_>>>()?;
    AlphaMatrix::new(rows).map_err(|e| Error::json("edges", e.to_string()))
}

pub fn alpha_to_json(alpha: &AlphaMatrix) -> String {
    let file = AlphaJson {
        edges: CellSpec::edges()
            .into_iter()
            .zip(alpha.rows())
            .map(|((from, to), row)| AlphaEdgeJson {
                from,
                to,
                logits: row.to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("alpha serializes")
}

pub fn read_alpha(path: impl AsRef<Path>) -> Result<AlphaMatrix> {
    alpha_from_json(&read_text(path.as_ref())?)
}

pub const BENCH_CSV_HEADER: &str = "method,frames,window,channels,height,width,repeats,seconds,speedup_vs_pairwise";

/// One row per method per repeat. `seconds` is that repeat's time and the
/// speedup compares against the same repeat's pairwise time.
pub fn bench_csv(report: &BenchReport) -> String {
    let (c, h, w) = match *report.frame_shape.dims() {
        [c, h, w] => (c, h, w),
        [c, h] => (c, h, 1),
        [c] => (c, 1, 1),
        ref other => (other[0], other[1], other[2..].iter().product()),
    };
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    let pairwise = &report.timing(Method::Pairwise).samples;
    for (r, &base) in pairwise.iter().enumerate().take(report.repeats) {
        for t in &report.timings {
            let secs = t.samples[r];
            out.push_str(&format!(
                "{},{},{},{c},{h},{w},{},{:.9},{:.6}\n",
                t.method,
                report.frames,
                report.window,
                report.repeats,
                secs,
                base / secs
            ));
        }
    }
    out
}

pub fn write_bench_csv(path: impl AsRef<Path>, report: &BenchReport) -> Result<()> {
    write_file(path.as_ref(), bench_csv(report).as_bytes())
}
