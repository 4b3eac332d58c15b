//! File formats: PFM/PGM/PPM rasters, PLY point clouds, view manifests,
//! run configuration, synthetic scene configuration and key-value reports.
//!
//! Readers are strict. Truncated data, trailing bytes, bad magic numbers and
//! out-of-range values are all errors naming the file and the problem.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{
    GeometryError, Intrinsics, Label, LabeledCloud, LabeledPoint, Raster, RigidTransform, View,
    UNLABELED,
};
use crate::registration::{PrefilterParams, RegistrationParams, SemanticDistance};
use crate::synth::{camera_pose, CaseOptions, NoiseSpec, Primitive, SceneSpec, SynthCase};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed {format}: {reason}")]
    Malformed {
        path: String,
        format: &'static str,
        reason: String,
    },
    #[error("{path}:{line}: {reason}")]
    Config {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Geometry {
        path: String,
        #[source]
        source: GeometryError,
    },
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn malformed<'a>(path: &'a Path, format: &'static str) -> impl FnOnce(String) -> IoError + 'a {
    move |reason| IoError::Malformed {
        path: path.display().to_string(),
        format,
        reason,
    }
}

fn geometry(path: &Path) -> impl FnOnce(GeometryError) -> IoError + '_ {
    move |source| IoError::Geometry {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Header tokenizer shared by PFM and PNM
// ---------------------------------------------------------------------------

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self, what: &str) -> Result<&'a str, String> {
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(format!("header ends before {what}")),
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| format!("non-ASCII {what}"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, String> {
        let tok = self.token(what)?;
        tok.parse().map_err(|_| format!("invalid {what} {tok:?}"))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn end_header(&mut self) -> Result<usize, String> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err("missing whitespace after header".into()),
        }
    }
}

fn check_payload(len: usize, expected: usize) -> Result<(), String> {
    match len.cmp(&expected) {
        std::cmp::Ordering::Less => Err(format!("truncated data: {len} bytes, expected {expected}")),
        std::cmp::Ordering::Greater => Err(format!(
            "{} trailing bytes after data",
            len - expected
        )),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

fn dims(w: usize, h: usize) -> Result<(), String> {
    if w == 0 || h == 0 {
        return Err(format!("zero image dimension {w}x{h}"));
    }
    if w.checked_mul(h).and_then(|n| n.checked_mul(12)).is_none() || w * h > 1 << 28 {
        return Err(format!("image dimension {w}x{h} too large"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

/// Decoded PFM: rows top to bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn parse_pfm(bytes: &[u8]) -> Result<Pfm, String> {
    let mut cur = HeaderCursor::new(bytes);
    let channels = match cur.token("magic")? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("bad magic {other:?}, expected Pf or PF")),
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    dims(width, height)?;
    let scale: f64 = cur.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format!("invalid scale {scale}"));
    }
    let start = cur.end_header()?;
    let payload = &bytes[start..];
    let n = width * height * channels;
    check_payload(payload.len(), n * 4)?;
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    let row_len = width * channels;
    // rows are stored bottom to top
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (k / row_len, k % row_len);
        data[(height - 1 - row) * row_len + col] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Little-endian PFM bytes.
pub fn encode_pfm(pfm: &Pfm) -> Vec<u8> {
    let magic = if pfm.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    let row_len = pfm.width * pfm.channels;
    for row in (0..pfm.height).rev() {
        for v in &pfm.data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: &Path) -> Result<Pfm, IoError> {
    parse_pfm(&read_bytes(path)?).map_err(malformed(path, "PFM"))
}

/// Single-channel PFM as a depth raster in meters.
pub fn read_depth_pfm(path: &Path) -> Result<Raster<f64>, IoError> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(malformed(path, "PFM")("depth must have one channel (Pf)".into()));
    }
    Raster::from_vec(pfm.width, pfm.height, pfm.data.iter().map(|&v| v as f64).collect())
        .map_err(geometry(path))
}

pub fn write_depth_pfm(path: &Path, depth: &Raster<f64>) -> Result<(), IoError> {
    let pfm = Pfm {
        width: depth.width(),
        height: depth.height(),
        channels: 1,
        data: depth.as_slice().iter().map(|&v| v as f32).collect(),
    };
    write_bytes(path, &encode_pfm(&pfm))
}

/// Three-channel PFM, e.g. an HHA image.
pub fn write_rgb_pfm(path: &Path, image: &Raster<[f64; 3]>) -> Result<(), IoError> {
    let pfm = Pfm {
        width: image.width(),
        height: image.height(),
        channels: 3,
        data: image.as_slice().iter().flat_map(|c| c.map(|v| v as f32)).collect(),
    };
    write_bytes(path, &encode_pfm(&pfm))
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

/// Decoded binary PNM (P5 or P6) with samples in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Pnm, String> {
    let mut cur = HeaderCursor::new(bytes);
    let channels = match cur.token("magic")? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("bad magic {other:?}, expected P5 or P6")),
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    dims(width, height)?;
    let maxval: u32 = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let start = cur.end_header()?;
    let payload = &bytes[start..];
    let n = width * height * channels;
    let wide = maxval > 255;
    check_payload(payload.len(), if wide { 2 * n } else { n })?;
    let samples: Vec<u16> = if wide {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        payload.iter().map(|&b| b as u16).collect()
    };
    if let Some(pos) = samples.iter().position(|&s| s as u32 > maxval) {
        return Err(format!("sample {} at index {pos} exceeds maxval {maxval}", samples[pos]));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pnm(pnm: &Pnm) -> Vec<u8> {
    let magic = if pnm.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n{}\n", pnm.width, pnm.height, pnm.maxval).into_bytes();
    if pnm.maxval > 255 {
        for s in &pnm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(pnm.samples.iter().map(|&s| s as u8));
    }
    out
}

fn read_pnm(path: &Path, channels: usize) -> Result<Pnm, IoError> {
    let (format, want) = if channels == 3 { ("PPM", "P6") } else { ("PGM", "P5") };
    let pnm = parse_pnm(&read_bytes(path)?).map_err(malformed(path, format))?;
    if pnm.channels != channels {
        return Err(malformed(path, format)(format!("expected a {want} image")));
    }
    Ok(pnm)
}

/// PPM color image scaled to `[0, 1]`.
pub fn read_color_ppm(path: &Path) -> Result<Raster<[f64; 3]>, IoError> {
    let pnm = read_pnm(path, 3)?;
    let m = pnm.maxval as f64;
    let data = pnm
        .samples
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / m, c[1] as f64 / m, c[2] as f64 / m])
        .collect();
    Raster::from_vec(pnm.width, pnm.height, data).map_err(geometry(path))
}

pub fn write_color_ppm(path: &Path, color: &Raster<[f64; 3]>) -> Result<(), IoError> {
    let pnm = Pnm {
        width: color.width(),
        height: color.height(),
        channels: 3,
        maxval: 255,
        samples: color.as_slice().iter().flat_map(|c| c.map(to_u8).map(u16::from)).collect(),
    };
    write_bytes(path, &encode_pnm(&pnm))
}

fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// PGM label image. The maximum sample value (255 for 8-bit files, 65535
/// for 16-bit ones) marks unlabeled pixels.
pub fn read_labels_pgm(path: &Path) -> Result<Raster<Label>, IoError> {
    let pnm = read_pnm(path, 1)?;
    let wide = pnm.maxval > 255;
    let data = pnm
        .samples
        .iter()
        .map(|&s| if (!wide && s == 255) || s == UNLABELED { UNLABELED } else { s })
        .collect();
    Raster::from_vec(pnm.width, pnm.height, data).map_err(geometry(path))
}

/// Always 16-bit so every label id and the unlabeled marker survive.
pub fn write_labels_pgm(path: &Path, labels: &Raster<Label>) -> Result<(), IoError> {
    let pnm = Pnm {
        width: labels.width(),
        height: labels.height(),
        channels: 1,
        maxval: 65535,
        samples: labels.as_slice().to_vec(),
    };
    write_bytes(path, &encode_pnm(&pnm))
}

/// Depth from a PGM: `sample · scale` meters, zero samples invalid.
pub fn read_depth_pgm(path: &Path, scale: f64) -> Result<Raster<f64>, IoError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(malformed(path, "PGM")(format!("depth scale must be > 0, got {scale}")));
    }
    let pnm = read_pnm(path, 1)?;
    let data = pnm.samples.iter().map(|&s| s as f64 * scale).collect();
    Raster::from_vec(pnm.width, pnm.height, data).map_err(geometry(path))
}

/// Depth by extension: `.pfm` in meters, `.pgm` with a required scale.
pub fn read_depth(path: &Path, scale: Option<f64>) -> Result<Raster<f64>, IoError> {
    match extension(path).as_str() {
        "pfm" => read_depth_pfm(path),
        "pgm" => match scale {
            Some(s) => read_depth_pgm(path, s),
            None => Err(malformed(path, "PGM")(
                "integer depth needs a depth_scale (meters per unit)".into(),
            )),
        },
        other => Err(malformed(path, "depth")(format!(
            "unsupported depth extension {other:?} (use .pfm or .pgm)"
        ))),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

const PLY_HEADER: &str = "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty ushort label\nend_header\n";

/// Binary little-endian PLY: float xyz, uchar rgb, ushort label.
pub fn encode_ply(cloud: &LabeledCloud) -> Vec<u8> {
    let header = PLY_HEADER.replace("{}", &cloud.len().to_string());
    let mut out = Vec::with_capacity(header.len() + cloud.len() * 17);
    out.extend_from_slice(header.as_bytes());
    for p in &cloud.points {
        for k in 0..3 {
            out.extend_from_slice(&(p.position[k] as f32).to_le_bytes());
        }
        out.extend(p.color.map(to_u8));
        out.extend_from_slice(&p.label.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

/// Reads binary little-endian or ASCII PLY with a single vertex element of
/// scalar properties. `x`, `y`, `z` are required; `red`/`green`/`blue` and
/// `label` are optional (integer colors are divided by 255, missing labels
/// become unlabeled).
pub fn parse_ply(bytes: &[u8]) -> Result<LabeledCloud, String> {
    let end_tag = b"end_header";
    let end = bytes
        .windows(end_tag.len())
        .position(|w| w == end_tag)
        .ok_or("missing end_header")?;
    let mut body = end + end_tag.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err("end_header must be followed by a newline".into());
    }
    body += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "non-ASCII header")?;
    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err("bad magic, expected \"ply\"".into());
    }
    let mut ascii = None;
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, "1.0"] => {
                ascii = Some(match *fmt {
                    "ascii" => true,
                    "binary_little_endian" => false,
                    other => return Err(format!("unsupported format {other:?}")),
                })
            }
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err("duplicate vertex element".into());
                }
                count = Some(n.parse().map_err(|_| format!("invalid vertex count {n:?}"))?);
                in_vertex = true;
            }
            ["element", name, n] => {
                if *n != "0" {
                    return Err(format!("unsupported non-empty element {name:?}"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err("list properties are not supported on vertices".into())
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| format!("unknown property type {ty:?}"))?;
                if props.iter().any(|(n, _)| n == name) {
                    return Err(format!("duplicate property {name:?}"));
                }
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            _ => return Err(format!("unrecognized header line {line:?}")),
        }
    }
    let ascii = ascii.ok_or("missing format line")?;
    let count = count.ok_or("missing vertex element")?;
    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex needs x, y and z properties".into()),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err("partial color properties".into()),
    };
    let label = find("label");
    if let Some(i) = label {
        if props[i].1.is_float() {
            return Err("label must be an integer property".into());
        }
    }

    let data = &bytes[body..];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count.min(1 << 24));
    if ascii {
        let text = std::str::from_utf8(data).map_err(|_| "non-ASCII vertex data")?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        for k in 0..count {
            let line = lines.next().ok_or(format!("truncated data: {k} of {count} vertices"))?;
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|_| format!("invalid number in vertex {k}"))?;
            if vals.len() != props.len() {
                return Err(format!("vertex {k} has {} values, expected {}", vals.len(), props.len()));
            }
            rows.push(vals);
        }
        if lines.next().is_some() {
            return Err("trailing data after vertices".into());
        }
    } else {
        let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
        let need = count.checked_mul(stride).ok_or("vertex count overflows")?;
        check_payload(data.len(), need)?;
        for chunk in data.chunks_exact(stride) {
            let mut off = 0;
            let mut vals = Vec::with_capacity(props.len());
            for (_, s) in &props {
                vals.push(s.read_le(&chunk[off..]));
                off += s.size();
            }
            rows.push(vals);
        }
    }

    let mut points = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let position = Vector3::new(r[ix], r[iy], r[iz]);
        if !position.iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite position in vertex {k}"));
        }
        let color = match rgb {
            Some(idx) => idx.map(|i| {
                if props[i].1.is_float() {
                    r[i]
                } else {
                    r[i] / 255.0
                }
            }),
            None => [0.0; 3],
        };
        let label = match label {
            Some(i) => {
                let v = r[i];
                if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
                    return Err(format!("label {v} out of range in vertex {k}"));
                }
                v as Label
            }
            None => UNLABELED,
        };
        points.push(LabeledPoint::new(position, color, label));
    }
    Ok(LabeledCloud::new(points))
}

pub fn read_ply(path: &Path) -> Result<LabeledCloud, IoError> {
    parse_ply(&read_bytes(path)?).map_err(malformed(path, "PLY"))
}

pub fn write_ply(path: &Path, cloud: &LabeledCloud) -> Result<(), IoError> {
    write_bytes(path, &encode_ply(cloud))
}

// ---------------------------------------------------------------------------
// Line-oriented text formats
// ---------------------------------------------------------------------------

/// Non-empty, comment-stripped lines with 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        let tok: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == '=')
            .filter(|t| !t.is_empty())
            .collect();
        (!tok.is_empty()).then_some((i + 1, tok))
    })
}

struct LineCtx<'a> {
    path: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, reason: impl Into<String>) -> IoError {
        IoError::Config {
            path: self.path.to_string(),
            line: self.line,
            reason: reason.into(),
        }
    }

    fn nums<const N: usize>(&self, key: &str, args: &[&str]) -> Result<[f64; N], IoError> {
        if args.len() != N {
            return Err(self.err(format!("{key} takes {N} values, got {}", args.len())));
        }
        let mut out = [0.0; N];
        for (o, a) in out.iter_mut().zip(args) {
            *o = a
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| self.err(format!("{key}: invalid number {a:?}")))?;
        }
        Ok(out)
    }

    fn one<T: std::str::FromStr>(&self, key: &str, args: &[&str]) -> Result<T, IoError> {
        match args {
            [a] => a.parse().map_err(|_| self.err(format!("{key}: invalid value {a:?}"))),
            _ => Err(self.err(format!("{key} takes one value, got {}", args.len()))),
        }
    }

    fn real(&self, key: &str, args: &[&str]) -> Result<f64, IoError> {
        Ok(self.nums::<1>(key, args)?[0])
    }

    fn intrinsics(&self, args: &[&str]) -> Result<Intrinsics, IoError> {
        let [fx, fy, cx, cy, w, h] = self.nums::<6>("intrinsics", args)?;
        let size = |v: f64| {
            (v.fract() == 0.0 && v >= 1.0)
                .then_some(v as usize)
                .ok_or_else(|| self.err("image size must be a positive integer"))
        };
        Intrinsics::new(fx, fy, cx, cy, size(w)?, size(h)?).map_err(|e| self.err(e.to_string()))
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| IoError::Config {
        path: path.display().to_string(),
        line: 0,
        reason: "file is not UTF-8 text".into(),
    })
}

// ---------------------------------------------------------------------------
// View manifest
// ---------------------------------------------------------------------------

/// One view's files; relative paths are resolved against the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub color: PathBuf,
    pub depth: PathBuf,
    pub labels: PathBuf,
    pub intrinsics: Intrinsics,
    pub depth_scale: Option<f64>,
}

/// Parses a manifest: `view` starts a block, followed by `color`, `depth`,
/// `labels` and `intrinsics fx fy cx cy width height` lines and an optional
/// `depth_scale`. An `intrinsics` line before the first block is the default
/// for every view.
pub fn parse_manifest(text: &str, path: &str, base: &Path) -> Result<Vec<ViewEntry>, IoError> {
    #[derive(Default)]
    struct Partial {
        line: usize,
        color: Option<PathBuf>,
        depth: Option<PathBuf>,
        labels: Option<PathBuf>,
        intrinsics: Option<Intrinsics>,
        depth_scale: Option<f64>,
    }
    let mut default_intr = None;
    let mut blocks: Vec<Partial> = Vec::new();
    for (line, tok) in content_lines(text) {
        let ctx = LineCtx { path, line };
        let (key, args) = (tok[0], &tok[1..]);
        if key == "view" {
            if !args.is_empty() {
                return Err(ctx.err("view takes no arguments"));
            }
            blocks.push(Partial {
                line,
                ..Default::default()
            });
            continue;
        }
        let Some(block) = blocks.last_mut() else {
            if key == "intrinsics" {
                default_intr = Some(ctx.intrinsics(args)?);
                continue;
            }
            return Err(ctx.err(format!("{key:?} before the first view block")));
        };
        let file = |slot: &mut Option<PathBuf>| -> Result<(), IoError> {
            if slot.is_some() {
                return Err(ctx.err(format!("duplicate {key}")));
            }
            let [p] = args else {
                return Err(ctx.err(format!("{key} takes one path")));
            };
            *slot = Some(base.join(p));
            Ok(())
        };
        match key {
            "color" => file(&mut block.color)?,
            "depth" => file(&mut block.depth)?,
            "labels" => file(&mut block.labels)?,
            "intrinsics" => block.intrinsics = Some(ctx.intrinsics(args)?),
            "depth_scale" => {
                let s = ctx.real(key, args)?;
                if s <= 0.0 {
                    return Err(ctx.err("depth_scale must be > 0"));
                }
                block.depth_scale = Some(s);
            }
            _ => return Err(ctx.err(format!("unknown key {key:?}"))),
        }
    }
    if blocks.is_empty() {
        return Err(IoError::Config {
            path: path.to_string(),
            line: 0,
            reason: "manifest lists no views".into(),
        });
    }
    blocks
        .into_iter()
        .map(|b| {
            let ctx = LineCtx { path, line: b.line };
            let need = |p: Option<PathBuf>, what: &str| p.ok_or_else(|| ctx.err(format!("view is missing {what}")));
            Ok(ViewEntry {
                color: need(b.color, "color")?,
                depth: need(b.depth, "depth")?,
                labels: need(b.labels, "labels")?,
                intrinsics: b
                    .intrinsics
                    .or(default_intr)
                    .ok_or_else(|| ctx.err("view is missing intrinsics"))?,
                depth_scale: b.depth_scale,
            })
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ViewEntry>, IoError> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, &path.display().to_string(), base)
}

pub fn load_view(entry: &ViewEntry) -> Result<View, IoError> {
    let color = read_color_ppm(&entry.color)?;
    let depth = read_depth(&entry.depth, entry.depth_scale)?;
    let labels = read_labels_pgm(&entry.labels)?;
    View::new(color, depth, labels, entry.intrinsics).map_err(geometry(&entry.depth))
}

pub fn load_views(manifest: &Path) -> Result<Vec<View>, IoError> {
    read_manifest(manifest)?.iter().map(load_view).collect()
}

/// Writes a view's three rasters and returns its manifest block.
pub fn write_view(dir: &Path, stem: &str, view: &View) -> Result<String, IoError> {
    let names = [
        format!("{stem}_color.ppm"),
        format!("{stem}_depth.pfm"),
        format!("{stem}_labels.pgm"),
    ];
    write_color_ppm(&dir.join(&names[0]), &view.color)?;
    write_depth_pfm(&dir.join(&names[1]), &view.depth)?;
    write_labels_pgm(&dir.join(&names[2]), &view.labels)?;
    let i = &view.intrinsics;
    Ok(format!(
        "view\ncolor {}\ndepth {}\nlabels {}\nintrinsics {} {} {} {} {} {}\n",
        names[0], names[1], names[2], i.fx, i.fy, i.cx, i.cy, i.width, i.height
    ))
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub registration: RegistrationParams,
    /// Distance threshold for reconstruction accuracy/completeness, meters.
    pub recon_threshold: f64,
    pub delta_thresholds: Vec<f64>,
    /// 0 quiet, 1 summary, 2 per-view detail on stderr.
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            registration: RegistrationParams::default(),
            recon_threshold: 0.05,
            delta_thresholds: crate::metrics::DEFAULT_DELTA_THRESHOLDS.to_vec(),
            verbosity: 1,
        }
    }
}

fn parse_bool(ctx: &LineCtx, key: &str, args: &[&str]) -> Result<bool, IoError> {
    match args {
        ["true" | "1" | "yes" | "on"] => Ok(true),
        ["false" | "0" | "no" | "off"] => Ok(false),
        _ => Err(ctx.err(format!("{key} expects true or false"))),
    }
}

/// `key value` (or `key = value`) lines; unspecified keys keep defaults.
pub fn parse_run_config(text: &str, path: &str) -> Result<RunConfig, IoError> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeMap::new();
    for (line, tok) in content_lines(text) {
        let ctx = LineCtx { path, line };
        let (key, args) = (tok[0], &tok[1..]);
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(ctx.err(format!("{key} already set on line {prev}")));
        }
        let r = &mut cfg.registration;
        let pf: &mut PrefilterParams = &mut r.prefilter;
        match key {
            "w1" => r.w1 = ctx.real(key, args)?,
            "w2" => r.w2 = ctx.real(key, args)?,
            "reject_dist" => r.reject_dist = ctx.real(key, args)?,
            "max_iters" => r.max_iters = ctx.one(key, args)?,
            "trans_eps" => r.trans_eps = ctx.real(key, args)?,
            "rot_eps" => r.rot_eps = ctx.real(key, args)?,
            "fuse_voxel" => r.fuse_voxel = ctx.real(key, args)?,
            "min_label_points" => r.min_label_points = ctx.one(key, args)?,
            "local_refine" => r.local_refine = parse_bool(&ctx, key, args)?,
            "semantic_mode" => {
                r.semantic = match args {
                    ["categorical"] => SemanticDistance::Categorical,
                    ["squared"] => SemanticDistance::SquaredDifference,
                    _ => return Err(ctx.err("semantic_mode expects categorical or squared")),
                }
            }
            "plane_tol" => pf.plane_tol = ctx.real(key, args)?,
            "min_support_frac" => pf.min_support_fraction = ctx.real(key, args)?,
            "isolation_k" => pf.isolation_neighbors = ctx.one(key, args)?,
            "isolation_radius" => pf.isolation_radius = ctx.real(key, args)?,
            "ransac_iters" => pf.ransac_iterations = ctx.one(key, args)?,
            "max_planes" => pf.max_planes = ctx.one(key, args)?,
            "seed" => pf.seed = ctx.one(key, args)?,
            "recon_threshold" => {
                cfg.recon_threshold = ctx.real(key, args)?;
                if cfg.recon_threshold <= 0.0 {
                    return Err(ctx.err("recon_threshold must be > 0"));
                }
            }
            "delta_thresholds" => cfg.delta_thresholds = parse_thresholds(args.join(",").as_str()).map_err(|e| ctx.err(e))?,
            "verbosity" => cfg.verbosity = ctx.one(key, args)?,
            _ => return Err(ctx.err(format!("unknown key {key:?}"))),
        }
    }
    cfg.registration.validate().map_err(|e| IoError::Config {
        path: path.to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn read_run_config(path: &Path) -> Result<RunConfig, IoError> {
    parse_run_config(&read_text(path)?, &path.display().to_string())
}

/// Comma- or space-separated list of thresholds, each > 1.
pub fn parse_thresholds(s: &str) -> Result<Vec<f64>, String> {
    let vals: Vec<f64> = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("invalid threshold {t:?}")))
        .collect::<Result<_, _>>()?;
    if vals.is_empty() {
        return Err("no thresholds given".into());
    }
    if let Some(t) = vals.iter().find(|t| !(t.is_finite() && **t > 1.0)) {
        return Err(format!("threshold {t} must be > 1"));
    }
    Ok(vals)
}

// ---------------------------------------------------------------------------
// Synthetic scene configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub intrinsics: Intrinsics,
    /// Camera-to-world poses.
    pub poses: Vec<RigidTransform>,
    pub noise: NoiseSpec,
    pub options: CaseOptions,
}

/// Scene description, one statement per line:
///
/// ```text
/// seed 7
/// room xmin ymin zmin xmax ymax zmax
/// shell                              # floor, walls, ceiling
/// box   label r g b cx cy cz yaw sx sy sz
/// plane label r g b cx cy cz rx ry rz sx sy
/// texture 0.5
/// camera fx fy cx cy width height
/// pose x y z yaw pitch
/// noise.scale_bias 1.02
/// noise.warp_amp 0.02
/// noise.warp_cells 4
/// noise.pixel_sigma 0.005
/// noise.seed 1
/// min_overlap 0.3
/// gt_voxel 0.01
/// ```
///
/// Angles are degrees; `plane` takes a rotation vector. Colors are in
/// `[0, 1]`. World y points down.
pub fn parse_synth_config(text: &str, path: &str) -> Result<SynthConfig, IoError> {
    let mut seed = 0u64;
    let mut room: Option<([f64; 3], [f64; 3])> = None;
    let mut shell = false;
    let mut texture = None;
    let mut primitives = Vec::new();
    let mut intrinsics = None;
    let mut poses = Vec::new();
    let mut noise = NoiseSpec::none();
    let mut options = CaseOptions::default();
    let label_of = |ctx: &LineCtx, v: f64| -> Result<Label, IoError> {
        (v.fract() == 0.0 && (0.0..65535.0).contains(&v))
            .then_some(v as Label)
            .ok_or_else(|| ctx.err(format!("label {v} must be an integer in 0..65535")))
    };
    let color_of = |ctx: &LineCtx, c: &[f64]| -> Result<[f64; 3], IoError> {
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ctx.err("colors must lie in [0, 1]"));
        }
        Ok([c[0], c[1], c[2]])
    };
    for (line, tok) in content_lines(text) {
        let ctx = LineCtx { path, line };
        let (key, args) = (tok[0], &tok[1..]);
        match key {
            "seed" => seed = ctx.one(key, args)?,
            "room" => {
                let v = ctx.nums::<6>(key, args)?;
                room = Some(([v[0], v[1], v[2]], [v[3], v[4], v[5]]));
            }
            "shell" => shell = true,
            "texture" => texture = Some(ctx.real(key, args)?),
            "box" => {
                let v = ctx.nums::<11>(key, args)?;
                if v[8..].iter().any(|s| *s <= 0.0) {
                    return Err(ctx.err("box sizes must be > 0"));
                }
                primitives.push(Primitive::cuboid(
                    [v[4], v[5], v[6]],
                    [v[8], v[9], v[10]],
                    v[7],
                    label_of(&ctx, v[0])?,
                    color_of(&ctx, &v[1..4])?,
                ));
            }
            "plane" => {
                let v = ctx.nums::<12>(key, args)?;
                if v[10..].iter().any(|s| *s <= 0.0) {
                    return Err(ctx.err("plane sizes must be > 0"));
                }
                primitives.push(Primitive::rect(
                    [v[4], v[5], v[6]],
                    [v[7], v[8], v[9]],
                    [v[10], v[11]],
                    label_of(&ctx, v[0])?,
                    color_of(&ctx, &v[1..4])?,
                ));
            }
            "camera" => intrinsics = Some(ctx.intrinsics(args)?),
            "pose" => {
                let v = ctx.nums::<5>(key, args)?;
                poses.push(camera_pose([v[0], v[1], v[2]], v[3], v[4]));
            }
            "noise.scale_bias" => noise.scale_bias = ctx.real(key, args)?,
            "noise.warp_amp" => noise.warp_amp = ctx.real(key, args)?,
            "noise.warp_cells" => noise.warp_cells = ctx.one(key, args)?,
            "noise.pixel_sigma" => noise.pixel_sigma = ctx.real(key, args)?,
            "noise.seed" => noise.seed = ctx.one(key, args)?,
            "min_overlap" => options.min_overlap = ctx.real(key, args)?,
            "gt_voxel" => options.gt_voxel = ctx.real(key, args)?,
            _ => return Err(ctx.err(format!("unknown key {key:?}"))),
        }
    }
    let whole = |reason: &str| IoError::Config {
        path: path.to_string(),
        line: 0,
        reason: reason.to_string(),
    };
    let (lo, hi) = room.ok_or_else(|| whole("missing room"))?;
    let mut scene = SceneSpec::new(lo, hi, seed);
    if let Some(t) = texture {
        scene.texture = t;
    }
    if shell {
        scene = scene.with_room_shell();
    }
    scene.primitives.extend(primitives);
    scene.validate().map_err(|e| whole(&e.to_string()))?;
    noise.validate().map_err(|e| whole(&e.to_string()))?;
    if !(options.gt_voxel.is_finite() && options.gt_voxel > 0.0) {
        return Err(whole("gt_voxel must be > 0"));
    }
    Ok(SynthConfig {
        scene,
        intrinsics: intrinsics.ok_or_else(|| whole("missing camera"))?,
        poses,
        noise,
        options,
    })
}

pub fn read_synth_config(path: &Path) -> Result<SynthConfig, IoError> {
    parse_synth_config(&read_text(path)?, &path.display().to_string())
}

/// Writes noisy views, `manifest.txt`, `gt_transforms.txt` and
/// `gt_cloud.ply` into `dir`.
pub fn write_case(dir: &Path, case: &SynthCase) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut manifest = String::new();
    for (i, view) in case.views.iter().enumerate() {
        manifest.push_str(&write_view(dir, &format!("view_{i}"), view)?);
    }
    write_bytes(&dir.join("manifest.txt"), manifest.as_bytes())?;
    let mut report = Report::default();
    for (i, t) in case.gt_transforms.iter().enumerate() {
        report.push(&format!("view_{i}.transform"), format_transform(t));
    }
    write_bytes(&dir.join("gt_transforms.txt"), report.render().as_bytes())?;
    write_ply(&dir.join("gt_cloud.ply"), &case.gt_cloud)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Ordered `key value` lines. Floats use the shortest round-trip form, so
/// identical runs give identical text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| format!("line {}: expected \"key value\"", i + 1))?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }
}

/// Row-major 3×4 `[R | t]`, space separated.
pub fn format_transform(t: &RigidTransform) -> String {
    let m = t.to_matrix4();
    m[..3]
        .iter()
        .flat_map(|row| row.iter())
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_transform(s: &str) -> Result<RigidTransform, String> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("invalid number {t:?}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 12 {
        return Err(format!("expected 12 values, got {}", v.len()));
    }
    let r = nalgebra::Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    RigidTransform::new(r, Vector3::new(v[3], v[7], v[11])).map_err(|e| e.to_string())
}
