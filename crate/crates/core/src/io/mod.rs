//! Little-endian raster and flow files, trajectory text files and the
//! dataset directory layout.

mod dataset;

pub use dataset::{
    conf_path, flow_path, frame_file, pair_file, read_intrinsics, read_manifest, write_intrinsics,
    write_manifest, Dataset, DatasetManifest,
};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::raster::Raster;

/// Magic number at the start of a `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated file")]
    TruncatedFile { path: PathBuf },
    #[error("{path}: dimension mismatch: {detail}")]
    DimensionMismatch { path: PathBuf, detail: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. }
            | IoError::BadMagic { path }
            | IoError::TruncatedFile { path }
            | IoError::DimensionMismatch { path, .. }
            | IoError::Parse { path, .. } => path,
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub(crate) fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn dims_ok(path: &Path, width: usize, height: usize) -> Result<(), IoError> {
    if width == 0 || height == 0 || width > i32::MAX as usize || height > i32::MAX as usize {
        return Err(IoError::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("{width}x{height}"),
        });
    }
    Ok(())
}

/// Single-channel PFM bytes: `Pf`, dimensions, scale `-1.0` (little-endian),
/// then rows bottom to top.
pub fn encode_pfm(raster: &Raster<f64>) -> Vec<u8> {
    let (w, h) = (raster.width(), raster.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(*raster.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited header token.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos)
        .then(|| std::str::from_utf8(&bytes[start..*pos]).ok())
        .flatten()
}

pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<Raster<f64>, IoError> {
    let mut pos = 0;
    let truncated = || IoError::TruncatedFile {
        path: path.to_path_buf(),
    };
    if header_token(bytes, &mut pos).ok_or_else(truncated)? != "Pf" {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let number = |pos: &mut usize| -> Result<f64, IoError> {
        let tok = header_token(bytes, pos).ok_or_else(truncated)?;
        tok.parse::<f64>()
            .map_err(|_| parse_err(path, 0, format!("bad header token {tok:?}")))
    };
    let (w, h, scale) = (number(&mut pos)?, number(&mut pos)?, number(&mut pos)?);
    if w.fract() != 0.0 || h.fract() != 0.0 || w < 0.0 || h < 0.0 {
        return Err(parse_err(path, 0, "non-integer dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    dims_ok(path, w, h)?;
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let need = w * h * 4;
    if bytes.len() < pos + need {
        return Err(truncated());
    }
    let little = scale < 0.0;
    let data = &bytes[pos..pos + need];
    let mut values = vec![0.0; w * h];
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, row) = (k % w, k / w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    Ok(Raster::from_vec(w, h, values))
}

pub fn write_pfm(path: &Path, raster: &Raster<f64>) -> Result<(), IoError> {
    dims_ok(path, raster.width(), raster.height())?;
    write_bytes(path, &encode_pfm(raster))
}

pub fn read_pfm(path: &Path) -> Result<Raster<f64>, IoError> {
    decode_pfm(path, &read_bytes(path)?)
}

/// Middlebury `.flo` bytes: magic, `i32` width and height, then interleaved
/// `f32` (u, v) row-major from the top row.
pub fn encode_flo(flow: &Raster<Vector2<f64>>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.iter() {
        out.extend_from_slice(&(v.x as f32).to_le_bytes());
        out.extend_from_slice(&(v.y as f32).to_le_bytes());
    }
    out
}

pub fn decode_flo(path: &Path, bytes: &[u8]) -> Result<Raster<Vector2<f64>>, IoError> {
    let truncated = || IoError::TruncatedFile {
        path: path.to_path_buf(),
    };
    let word = |k: usize| -> Result<[u8; 4], IoError> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(truncated)
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let (w, h) = (i32::from_le_bytes(word(1)?), i32::from_le_bytes(word(2)?));
    if w <= 0 || h <= 0 {
        return Err(IoError::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("{w}x{h}"),
        });
    }
    let (w, h) = (w as usize, h as usize);
    let body = bytes.get(12..12 + w * h * 8).ok_or_else(truncated)?;
    let values = body
        .chunks_exact(8)
        .map(|c| {
            Vector2::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64,
            )
        })
        .collect();
    Ok(Raster::from_vec(w, h, values))
}

pub fn write_flo(path: &Path, flow: &Raster<Vector2<f64>>) -> Result<(), IoError> {
    dims_ok(path, flow.width(), flow.height())?;
    write_bytes(path, &encode_flo(flow))
}

pub fn read_flo(path: &Path) -> Result<Raster<Vector2<f64>>, IoError> {
    decode_flo(path, &read_bytes(path)?)
}

/// Trajectory text: one `index tx ty tz qx qy qz qw` line per frame holding
/// the camera-to-world pose.
pub fn format_trajectory(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for (k, pose) in poses.iter().enumerate() {
        let c2w = pose.inverse();
        let (t, q) = (c2w.translation, c2w.rotation.quaternion().coords);
        s.push_str(&format!(
            "{k} {} {} {} {} {} {} {}\n",
            t.x, t.y, t.z, q.x, q.y, q.z, q.w
        ));
    }
    s
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Vec<RigidTransform>, IoError> {
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, n + 1, e.to_string()))?;
        if fields.len() != 8 {
            return Err(parse_err(
                path,
                n + 1,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        if fields[0] != poses.len() as f64 {
            return Err(parse_err(
                path,
                n + 1,
                format!("expected index {}", poses.len()),
            ));
        }
        let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(parse_err(path, n + 1, "quaternion is not normalized"));
        }
        let c2w = RigidTransform::new(
            UnitQuaternion::new_normalize(q),
            Vector3::new(fields[1], fields[2], fields[3]),
        );
        poses.push(c2w.inverse());
    }
    Ok(poses)
}

pub fn write_trajectory(path: &Path, poses: &[RigidTransform]) -> Result<(), IoError> {
    write_bytes(path, format_trajectory(poses).as_bytes())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<RigidTransform>, IoError> {
    parse_trajectory(path, &read_text(path)?)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(path: &Path, text: &str) -> Result<Vec<(usize, String, String)>, IoError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, n + 1, "expected key = value"))?;
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
