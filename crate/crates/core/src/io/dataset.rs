use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use super::{
    parse_err, parse_key_values, read_flo, read_pfm, read_text, read_trajectory, write_bytes,
    IoError,
};
use crate::geometry::{Intrinsics, RigidTransform};
use crate::raster::{GridLevel, Raster};

pub fn frame_file(frame: usize, ext: &str) -> String {
    format!("{frame:06}.{ext}")
}

pub fn pair_file(i: usize, j: usize, ext: &str) -> String {
    format!("{i:06}_{j:06}.{ext}")
}

fn level_dir(level: GridLevel) -> &'static str {
    match level {
        GridLevel::LowRes => "low",
        GridLevel::FullRes => "full",
    }
}

pub fn flow_path(root: &Path, i: usize, j: usize, level: GridLevel) -> PathBuf {
    root.join("flow")
        .join(level_dir(level))
        .join(pair_file(i, j, "flo"))
}

pub fn conf_path(root: &Path, i: usize, j: usize, level: GridLevel) -> PathBuf {
    root.join("conf")
        .join(level_dir(level))
        .join(pair_file(i, j, "pfm"))
}

/// Contents of `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub low_res_factor: usize,
    /// Directed pairs with low-res flow.
    pub low_pairs: Vec<(usize, usize)>,
    /// Directed pairs with full-res flow.
    pub full_pairs: Vec<(usize, usize)>,
}

fn format_pairs(pairs: &[(usize, usize)]) -> String {
    pairs
        .iter()
        .map(|(i, j)| format!("{i},{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_pairs(path: &Path, line: usize, v: &str) -> Result<Vec<(usize, usize)>, IoError> {
    v.split_whitespace()
        .map(|p| {
            let (a, b) = p
                .split_once(',')
                .ok_or_else(|| parse_err(path, line, format!("bad pair {p:?}")))?;
            let a = a
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad pair {p:?}")))?;
            let b = b
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad pair {p:?}")))?;
            Ok((a, b))
        })
        .collect()
}

pub fn write_manifest(root: &Path, m: &DatasetManifest) -> Result<(), IoError> {
    let mut s = String::new();
    let _ = writeln!(s, "n_frames = {}", m.n_frames);
    let _ = writeln!(s, "width = {}", m.width);
    let _ = writeln!(s, "height = {}", m.height);
    let _ = writeln!(s, "low_res_factor = {}", m.low_res_factor);
    let _ = writeln!(s, "low_pairs = {}", format_pairs(&m.low_pairs));
    let _ = writeln!(s, "full_pairs = {}", format_pairs(&m.full_pairs));
    write_bytes(&root.join("manifest.txt"), s.as_bytes())
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, IoError> {
    let path = root.join("manifest.txt");
    let text = read_text(&path)?;
    let mut m = DatasetManifest {
        n_frames: 0,
        width: 0,
        height: 0,
        low_res_factor: 8,
        low_pairs: Vec::new(),
        full_pairs: Vec::new(),
    };
    let mut seen = [false; 3];
    for (line, k, v) in parse_key_values(&path, &text)? {
        let num = || {
            v.parse::<usize>()
                .map_err(|_| parse_err(&path, line, format!("bad value for {k}")))
        };
        match k.as_str() {
            "n_frames" => (m.n_frames, seen[0]) = (num()?, true),
            "width" => (m.width, seen[1]) = (num()?, true),
            "height" => (m.height, seen[2]) = (num()?, true),
            "low_res_factor" => m.low_res_factor = num()?,
            "low_pairs" => m.low_pairs = parse_pairs(&path, line, &v)?,
            "full_pairs" => m.full_pairs = parse_pairs(&path, line, &v)?,
            _ => return Err(parse_err(&path, line, format!("unknown key {k:?}"))),
        }
    }
    if seen.contains(&false) {
        return Err(parse_err(
            &path,
            0,
            "n_frames, width and height are required",
        ));
    }
    if m.low_res_factor == 0
        || !m.width.is_multiple_of(m.low_res_factor)
        || !m.height.is_multiple_of(m.low_res_factor)
    {
        return Err(IoError::DimensionMismatch {
            path,
            detail: format!(
                "{}x{} not divisible by {}",
                m.width, m.height, m.low_res_factor
            ),
        });
    }
    Ok(m)
}

pub fn write_intrinsics(root: &Path, k: &Intrinsics) -> Result<(), IoError> {
    let line = format!(
        "{} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    write_bytes(&root.join("intrinsics.txt"), line.as_bytes())
}

pub fn read_intrinsics(root: &Path) -> Result<Intrinsics, IoError> {
    let path = root.join("intrinsics.txt");
    let text = read_text(&path)?;
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != 6 {
        return Err(parse_err(&path, 1, "expected fx fy cx cy width height"));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| parse_err(&path, 1, format!("bad number {s:?}")))
    };
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(&path, 1, format!("bad size {s:?}")))
    };
    Intrinsics::new(
        num(f[0])?,
        num(f[1])?,
        num(f[2])?,
        num(f[3])?,
        int(f[4])?,
        int(f[5])?,
    )
    .map_err(|e| parse_err(&path, 1, e.to_string()))
}

/// A dataset directory:
///
/// ```text
/// intrinsics.txt            fx fy cx cy width height (full res)
/// manifest.txt              frame count, size, low-res factor, pair lists
/// poses_gt.txt              optional trajectory
/// disp_rel/%06d.pfm         relative mono disparity (full res)
/// disp_abs/%06d.pfm         metric mono disparity (full res)
/// motion/%06d.pfm           static probability, 1 = static (full res)
/// depth_gt/%06d.pfm         optional ground-truth depth (full res)
/// flow/{low,full}/%06d_%06d.flo
/// conf/{low,full}/%06d_%06d.pfm
/// ```
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub intrinsics: Intrinsics,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, IoError> {
        let manifest = read_manifest(root)?;
        let intrinsics = read_intrinsics(root)?;
        if intrinsics.width != manifest.width || intrinsics.height != manifest.height {
            return Err(IoError::DimensionMismatch {
                path: root.join("intrinsics.txt"),
                detail: "size differs from manifest".into(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            intrinsics,
        })
    }

    pub fn size_at(&self, level: GridLevel) -> (usize, usize) {
        let f = match level {
            GridLevel::FullRes => 1,
            GridLevel::LowRes => self.manifest.low_res_factor,
        };
        (self.manifest.width / f, self.manifest.height / f)
    }

    pub fn has_pair(&self, i: usize, j: usize, level: GridLevel) -> bool {
        let pairs = match level {
            GridLevel::LowRes => &self.manifest.low_pairs,
            GridLevel::FullRes => &self.manifest.full_pairs,
        };
        pairs.contains(&(i, j))
    }

    fn checked<T>(
        &self,
        path: PathBuf,
        r: Raster<T>,
        level: GridLevel,
    ) -> Result<Raster<T>, IoError> {
        let (w, h) = self.size_at(level);
        if r.width() != w || r.height() != h {
            return Err(IoError::DimensionMismatch {
                path,
                detail: format!("{}x{}, expected {w}x{h}", r.width(), r.height()),
            });
        }
        Ok(r)
    }

    /// Flow displacement and confidence for `i → j`.
    pub fn flow(
        &self,
        i: usize,
        j: usize,
        level: GridLevel,
    ) -> Result<(Raster<Vector2<f64>>, Raster<f64>), IoError> {
        let fp = flow_path(&self.root, i, j, level);
        let flow = self.checked(fp.clone(), read_flo(&fp)?, level)?;
        let cp = conf_path(&self.root, i, j, level);
        let conf = self.checked(cp.clone(), read_pfm(&cp)?, level)?;
        Ok((flow, conf))
    }

    fn frame_raster(&self, dir: &str, frame: usize) -> Result<Raster<f64>, IoError> {
        let path = self.root.join(dir).join(frame_file(frame, "pfm"));
        let r = read_pfm(&path)?;
        self.checked(path, r, GridLevel::FullRes)
    }

    pub fn disp_rel(&self, frame: usize) -> Result<Raster<f64>, IoError> {
        self.frame_raster("disp_rel", frame)
    }

    pub fn disp_abs(&self, frame: usize) -> Result<Raster<f64>, IoError> {
        self.frame_raster("disp_abs", frame)
    }

    pub fn motion(&self, frame: usize) -> Result<Raster<f64>, IoError> {
        self.frame_raster("motion", frame)
    }

    pub fn gt_depth(&self, frame: usize) -> Result<Raster<f64>, IoError> {
        self.frame_raster("depth_gt", frame)
    }

    pub fn gt_poses(&self) -> Result<Vec<RigidTransform>, IoError> {
        read_trajectory(&self.root.join("poses_gt.txt"))
    }

    /// Checks that every referenced file exists with consistent dimensions.
    pub fn validate(&self) -> Result<(), IoError> {
        for f in 0..self.manifest.n_frames {
            self.disp_rel(f)?;
            self.disp_abs(f)?;
            self.motion(f)?;
        }
        for &(i, j) in &self.manifest.low_pairs {
            self.flow(i, j, GridLevel::LowRes)?;
        }
        for &(i, j) in &self.manifest.full_pairs {
            self.flow(i, j, GridLevel::FullRes)?;
        }
        let n = self.manifest.n_frames;
        let bad = self
            .manifest
            .low_pairs
            .iter()
            .chain(&self.manifest.full_pairs)
            .find(|&&(i, j)| i >= n || j >= n || i == j);
        if let Some(&(i, j)) = bad {
            return Err(parse_err(
                &self.root.join("manifest.txt"),
                0,
                format!("invalid pair {i},{j}"),
            ));
        }
        Ok(())
    }
}
