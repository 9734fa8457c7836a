//! Synthetic dynamic scenes with exact ground truth: cameras, disparity,
//! flows, confidences, motion masks and corrupted mono-depth priors.

mod export;
mod noise;
mod scene;
mod trajectory;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::OnceLock;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::frame_graph::MotionMap;
use crate::geometry::{relative_pose, warp_pixel, Intrinsics, RigidTransform, Twist, Z_MIN};
use crate::raster::{DisparityGrid, GridLevel, Raster};

pub use noise::{normal_pair, stream, uniform_pair, Channel};
pub use scene::{Background, Hit, Mover, Scene};
pub use trajectory::{trajectory_family, TrajectoryKind};

/// Mean per-pair flow (full-res pixels) a feasible spec must stay within.
pub const FLOW_RANGE_PX: (f64, f64) = (0.5, 64.0);

const WAVES: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("pair ({i}, {j}) has mean flow {mean_flow:.3} px, outside [0.5, 64]")]
    SpecInfeasible { i: usize, j: usize, mean_flow: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSpec {
    pub center: Vector3<f64>,
    pub base_depth: f64,
    pub amplitude: f64,
    pub smoothness: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            center: Vector3::zeros(),
            base_depth: 8.0,
            amplitude: 0.2,
            smoothness: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Flow noise standard deviation in full-res pixels.
    pub flow_sigma: f64,
    /// Per-frame `a` of `D_rel = a·d + b + n` is drawn uniformly from this range.
    pub prior_scale: (f64, f64),
    pub prior_shift: (f64, f64),
    pub prior_sigma: f64,
    /// Noise on the metric prior `D_abs = d + n`.
    pub abs_sigma: f64,
    /// Flow confidence reported on mover pixels.
    pub mover_confidence: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            flow_sigma: 0.0,
            prior_scale: (1.0, 1.0),
            prior_shift: (0.0, 0.0),
            prior_sigma: 0.0,
            abs_sigma: 0.0,
            mover_confidence: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub trajectory: TrajectoryKind,
    pub magnitude: f64,
    pub wobble: f64,
    pub n_frames: usize,
    /// Full-resolution image size.
    pub width: usize,
    pub height: usize,
    pub low_res_factor: usize,
    /// Full-resolution focal length in pixels.
    pub focal: f64,
    pub background: BackgroundSpec,
    pub movers: Vec<Mover>,
    pub noise: NoiseSpec,
    pub enforce_flow_range: bool,
    /// Frame offsets of the full-res pairs (also the pairs checked for flow range).
    pub pair_offsets: Vec<usize>,
    /// Low-res BA flows are provided for every pair with `|i − j| ≤ ba_pair_radius`.
    pub ba_pair_radius: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            trajectory: TrajectoryKind::Forward,
            magnitude: 0.1,
            wobble: 0.0,
            n_frames: 10,
            width: 128,
            height: 96,
            low_res_factor: 8,
            focal: 110.0,
            background: BackgroundSpec::default(),
            movers: Vec::new(),
            noise: NoiseSpec::default(),
            enforce_flow_range: false,
            pair_offsets: vec![1, 2, 4, 8, 15],
            ba_pair_radius: 16,
        }
    }
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_frames < 2 {
            return Err(invalid("n_frames must be at least 2"));
        }
        if !(self.focal > 0.0) {
            return Err(invalid("focal must be positive"));
        }
        let f = self.low_res_factor;
        if f == 0
            || !self.width.is_multiple_of(f)
            || !self.height.is_multiple_of(f)
            || self.width < 2 * f
            || self.height < 2 * f
        {
            return Err(invalid(format!(
                "image {}×{} must be a multiple of the low-res factor {f} (at least 2 cells)",
                self.width, self.height
            )));
        }
        let b = &self.background;
        if !(b.base_depth > 0.0 && (0.0..1.0).contains(&b.amplitude) && b.smoothness > 0.0) {
            return Err(invalid(
                "background needs base_depth > 0, amplitude in [0, 1), smoothness > 0",
            ));
        }
        if self.trajectory != TrajectoryKind::Static && !(self.magnitude > 0.0) {
            return Err(invalid(
                "magnitude must be positive for a moving trajectory",
            ));
        }
        let n = &self.noise;
        if n.flow_sigma < 0.0 || n.prior_sigma < 0.0 || n.abs_sigma < 0.0 {
            return Err(invalid("noise levels must be non-negative"));
        }
        if n.prior_scale.0 > n.prior_scale.1 || n.prior_shift.0 > n.prior_shift.1 {
            return Err(invalid("prior ranges must be ordered"));
        }
        if !(0.0..=1.0).contains(&n.mover_confidence) {
            return Err(invalid("mover_confidence must lie in [0, 1]"));
        }
        if self
            .movers
            .iter()
            .any(|m| m.half_extent.iter().any(|&e| !(e > 0.0)))
        {
            return Err(invalid("mover extents must be positive"));
        }
        Ok(())
    }

    /// Plain `key = value` text, one mover per `mover` line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let v3 = |v: &Vector3<f64>| format!("{} {} {}", v.x, v.y, v.z);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "trajectory = {}", self.trajectory.name());
        let _ = writeln!(s, "magnitude = {}", self.magnitude);
        let _ = writeln!(s, "wobble = {}", self.wobble);
        let _ = writeln!(s, "n_frames = {}", self.n_frames);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "low_res_factor = {}", self.low_res_factor);
        let _ = writeln!(s, "focal = {}", self.focal);
        let _ = writeln!(s, "background_center = {}", v3(&self.background.center));
        let _ = writeln!(s, "base_depth = {}", self.background.base_depth);
        let _ = writeln!(s, "amplitude = {}", self.background.amplitude);
        let _ = writeln!(s, "smoothness = {}", self.background.smoothness);
        let n = &self.noise;
        let _ = writeln!(s, "flow_sigma = {}", n.flow_sigma);
        let _ = writeln!(s, "prior_scale = {} {}", n.prior_scale.0, n.prior_scale.1);
        let _ = writeln!(s, "prior_shift = {} {}", n.prior_shift.0, n.prior_shift.1);
        let _ = writeln!(s, "prior_sigma = {}", n.prior_sigma);
        let _ = writeln!(s, "abs_sigma = {}", n.abs_sigma);
        let _ = writeln!(s, "mover_confidence = {}", n.mover_confidence);
        let _ = writeln!(s, "enforce_flow_range = {}", self.enforce_flow_range);
        let offs: Vec<String> = self.pair_offsets.iter().map(|o| o.to_string()).collect();
        let _ = writeln!(s, "pair_offsets = {}", offs.join(","));
        let _ = writeln!(s, "ba_pair_radius = {}", self.ba_pair_radius);
        for m in &self.movers {
            let tw: Vec<String> = m.velocity.0.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(
                s,
                "mover = {} {} {}",
                v3(&m.center),
                v3(&m.half_extent),
                tw.join(" ")
            );
        }
        s
    }

    /// Parses [`SceneSpec::to_text`] output; omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut spec = SceneSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| invalid(format!("line {}: bad {what} for `{key}`", lineno + 1));
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad("number"));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad("integer"));
            let nums = |v: &str, n: usize| -> Result<Vec<f64>, SynthError> {
                let xs = v
                    .split_whitespace()
                    .map(num)
                    .collect::<Result<Vec<_>, _>>()?;
                if xs.len() == n {
                    Ok(xs)
                } else {
                    Err(bad(&format!("{n} numbers")))
                }
            };
            match key {
                "seed" => spec.seed = value.parse().map_err(|_| bad("integer"))?,
                "trajectory" => {
                    spec.trajectory =
                        TrajectoryKind::parse(value).ok_or_else(|| bad("trajectory"))?
                }
                "magnitude" => spec.magnitude = num(value)?,
                "wobble" => spec.wobble = num(value)?,
                "n_frames" => spec.n_frames = int(value)?,
                "width" => spec.width = int(value)?,
                "height" => spec.height = int(value)?,
                "low_res_factor" => spec.low_res_factor = int(value)?,
                "focal" => spec.focal = num(value)?,
                "background_center" => spec.background.center = Vector3::from_vec(nums(value, 3)?),
                "base_depth" => spec.background.base_depth = num(value)?,
                "amplitude" => spec.background.amplitude = num(value)?,
                "smoothness" => spec.background.smoothness = num(value)?,
                "flow_sigma" => spec.noise.flow_sigma = num(value)?,
                "prior_scale" => {
                    let v = nums(value, 2)?;
                    spec.noise.prior_scale = (v[0], v[1]);
                }
                "prior_shift" => {
                    let v = nums(value, 2)?;
                    spec.noise.prior_shift = (v[0], v[1]);
                }
                "prior_sigma" => spec.noise.prior_sigma = num(value)?,
                "abs_sigma" => spec.noise.abs_sigma = num(value)?,
                "mover_confidence" => spec.noise.mover_confidence = num(value)?,
                "enforce_flow_range" => {
                    spec.enforce_flow_range = value.parse().map_err(|_| bad("boolean"))?
                }
                "pair_offsets" => {
                    spec.pair_offsets = value
                        .split(',')
                        .map(|v| int(v.trim()))
                        .collect::<Result<_, _>>()?;
                }
                "ba_pair_radius" => spec.ba_pair_radius = int(value)?,
                "mover" => {
                    let v = nums(value, 12)?;
                    spec.movers.push(Mover {
                        center: Vector3::new(v[0], v[1], v[2]),
                        half_extent: Vector3::new(v[3], v[4], v[5]),
                        velocity: Twist::from_slice(&v[6..12]),
                    });
                }
                _ => return Err(invalid(format!("line {}: unknown key `{key}`", lineno + 1))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One directed flow field with its confidence; displacements in grid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFlow {
    pub flow: Raster<Vector2<f64>>,
    pub confidence: Raster<f64>,
}

/// Depth and mover id of every pixel of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRender {
    /// Camera-frame depth; NaN where the ray escapes the scene.
    pub depth: Raster<f64>,
    pub mover: Raster<Option<usize>>,
}

/// Ground truth of a generated scene. Rasters are rendered on demand at
/// either grid level; the low-res grid samples every `low_res_factor`-th
/// full-res pixel, so both levels agree exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub poses: Vec<RigidTransform>,
    pub scene: Scene,
    /// Full-resolution intrinsics.
    pub intrinsics: Intrinsics,
    /// Planted `(a, b)` of each frame's relative prior.
    pub prior_affine: Vec<(f64, f64)>,
    low_res: RenderCache,
}

/// Memoized low-res renders; ignored by equality.
#[derive(Clone, Default)]
struct RenderCache(Vec<OnceLock<FrameRender>>);

impl PartialEq for RenderCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl std::fmt::Debug for RenderCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RenderCache")
    }
}

pub fn generate(spec: &SceneSpec) -> Result<SceneBundle, SynthError> {
    spec.validate()?;
    let intrinsics = Intrinsics::centered(spec.focal, spec.width, spec.height)
        .map_err(|e| invalid(e.to_string()))?;
    let poses = trajectory_family(spec.trajectory, spec.n_frames, spec.magnitude, spec.wobble);
    let b = &spec.background;
    let waves_raw: Vec<(f64, Vector3<f64>, f64)> = (0..WAVES)
        .map(|k| {
            let st = stream(Channel::Background, k, 0);
            let (u1, u2) = uniform_pair(spec.seed, st, 0);
            let (n1, n2) = normal_pair(spec.seed, st, 1);
            let (n3, _) = normal_pair(spec.seed, st, 2);
            let dir = Vector3::new(n1, n2, n3).normalize();
            let freq = (0.5 + u1) / b.smoothness;
            (
                0.2 + u2,
                dir * freq,
                2.0 * PI * uniform_pair(spec.seed, st, 3).0,
            )
        })
        .collect();
    let total: f64 = waves_raw.iter().map(|w| w.0).sum();
    let waves = waves_raw
        .into_iter()
        .map(|(a, k, p)| (a / total, k, p))
        .collect();
    let scene = Scene {
        background: Background {
            center: b.center,
            base_depth: b.base_depth,
            amplitude: b.amplitude,
            smoothness: b.smoothness,
            waves,
        },
        movers: spec.movers.clone(),
    };
    for (k, p) in poses.iter().enumerate() {
        let c = p.center() - b.center;
        if c.norm() >= scene.background.min_radius() * 0.95 {
            return Err(invalid(format!("camera {k} leaves the room")));
        }
    }
    let n = &spec.noise;
    let prior_affine = (0..spec.n_frames)
        .map(|i| {
            let (u1, u2) = uniform_pair(spec.seed, stream(Channel::FrameAffine, i, 0), 0);
            (
                n.prior_scale.0 + u1 * (n.prior_scale.1 - n.prior_scale.0),
                n.prior_shift.0 + u2 * (n.prior_shift.1 - n.prior_shift.0),
            )
        })
        .collect();
    let bundle = SceneBundle {
        spec: spec.clone(),
        poses,
        scene,
        intrinsics,
        prior_affine,
        low_res: RenderCache((0..spec.n_frames).map(|_| OnceLock::new()).collect()),
    };
    if spec.enforce_flow_range {
        bundle.check_flow_range()?;
    }
    Ok(bundle)
}

impl SceneBundle {
    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn factor(&self, level: GridLevel) -> usize {
        match level {
            GridLevel::FullRes => 1,
            GridLevel::LowRes => self.spec.low_res_factor,
        }
    }

    pub fn intrinsics_at(&self, level: GridLevel) -> Intrinsics {
        self.intrinsics.downscaled(self.factor(level))
    }

    /// Flat full-res index of grid pixel `(x, y)`; the noise counter.
    fn noise_index(&self, level: GridLevel, x: usize, y: usize) -> u64 {
        let s = self.factor(level);
        ((y * s) * self.spec.width + x * s) as u64
    }

    pub fn render(&self, frame: usize, level: GridLevel) -> FrameRender {
        match (level, self.low_res.0.get(frame)) {
            (GridLevel::LowRes, Some(cell)) => cell
                .get_or_init(|| self.render_uncached(frame, level))
                .clone(),
            _ => self.render_uncached(frame, level),
        }
    }

    fn render_uncached(&self, frame: usize, level: GridLevel) -> FrameRender {
        let k = self.intrinsics_at(level);
        let pose = &self.poses[frame];
        let hits: Vec<Option<Hit>> = (0..k.width * k.height)
            .into_par_iter()
            .map(|p| {
                self.scene.cast(
                    pose,
                    frame,
                    &k.ray((p % k.width) as f64, (p / k.width) as f64),
                )
            })
            .collect();
        FrameRender {
            depth: Raster::from_vec(
                k.width,
                k.height,
                hits.iter()
                    .map(|h| h.map_or(f64::NAN, |h| h.depth()))
                    .collect(),
            ),
            mover: Raster::from_vec(
                k.width,
                k.height,
                hits.iter()
                    .map(|h| match h {
                        Some(Hit::Mover { index, .. }) => Some(*index),
                        _ => None,
                    })
                    .collect(),
            ),
        }
    }

    pub fn gt_disparity(&self, frame: usize, level: GridLevel) -> DisparityGrid {
        DisparityGrid::from_values(self.render(frame, level).depth.map(|&z| 1.0 / z), level)
    }

    pub fn gt_depth(&self, frame: usize, level: GridLevel) -> Raster<f64> {
        self.render(frame, level).depth
    }

    /// 1 on static pixels, 0 inside mover silhouettes.
    pub fn motion_mask(&self, frame: usize, level: GridLevel) -> MotionMap {
        MotionMap(
            self.render(frame, level)
                .mover
                .map(|m| if m.is_some() { 0.0 } else { 1.0 }),
        )
    }

    /// Fraction of pixels of `frame` covered by movers.
    pub fn mover_coverage(&self, frame: usize, level: GridLevel) -> f64 {
        let r = self.render(frame, level);
        r.mover.iter().filter(|m| m.is_some()).count() as f64 / r.mover.len() as f64
    }

    /// Noiseless target of pixel `(x, y)` of frame `i` in frame `j`.
    fn true_target(
        &self,
        i: usize,
        j: usize,
        level: GridLevel,
        x: usize,
        y: usize,
        render: &FrameRender,
    ) -> Option<Vector2<f64>> {
        let k = self.intrinsics_at(level);
        let p = render.depth.index_of(x, y);
        let z = render.depth[p];
        if !z.is_finite() {
            return None;
        }
        match render.mover[p] {
            None => {
                let rel = relative_pose(&self.poses[i], &self.poses[j]);
                if rel == RigidTransform::identity() {
                    return Some(Vector2::new(x as f64, y as f64));
                }
                warp_pixel(&rel, &k, x as f64, y as f64, 1.0 / z)
            }
            Some(m) => {
                let mover = &self.scene.movers[m];
                let x_world = self.poses[i]
                    .inverse()
                    .transform_point(&(k.ray(x as f64, y as f64) * z));
                let x_obj = mover.pose(i).inverse().transform_point(&x_world);
                let xc = self.poses[j].transform_point(&mover.pose(j).transform_point(&x_obj));
                if xc.z <= Z_MIN {
                    return None;
                }
                Some(Vector2::new(
                    k.fx * xc.x / xc.z + k.cx,
                    k.fy * xc.y / xc.z + k.cy,
                ))
            }
        }
    }

    /// Flow `i → j`: displacement plus injected noise. NaN with zero
    /// confidence where the pixel has no correspondence; zero confidence
    /// where the target leaves the image.
    pub fn flow(&self, i: usize, j: usize, level: GridLevel) -> PairFlow {
        let render = self.render(i, level);
        self.flow_from_render(i, j, level, &render)
    }

    fn flow_from_render(
        &self,
        i: usize,
        j: usize,
        level: GridLevel,
        render: &FrameRender,
    ) -> PairFlow {
        let (w, h) = (render.depth.width(), render.depth.height());
        let sigma = self.spec.noise.flow_sigma / self.factor(level) as f64;
        let st = stream(Channel::Flow, i, j);
        let out: Vec<(Vector2<f64>, f64)> = (0..w * h)
            .into_par_iter()
            .map(|p| {
                let (x, y) = (p % w, p / w);
                let Some(target) = self.true_target(i, j, level, x, y, render) else {
                    return (Vector2::new(f64::NAN, f64::NAN), 0.0);
                };
                let mut flow = target - Vector2::new(x as f64, y as f64);
                let in_view = target.x >= 0.0
                    && target.y >= 0.0
                    && target.x <= (w - 1) as f64
                    && target.y <= (h - 1) as f64;
                let mut conf = 1.0;
                if sigma > 0.0 {
                    let (a, b) = normal_pair(self.spec.seed, st, self.noise_index(level, x, y));
                    let n = Vector2::new(a, b) * sigma;
                    flow += n;
                    conf = (-n.norm() / sigma).exp();
                }
                if render.mover[p].is_some() {
                    conf = self.spec.noise.mover_confidence;
                }
                if !in_view {
                    conf = 0.0;
                }
                (flow, conf)
            })
            .collect();
        PairFlow {
            flow: Raster::from_vec(w, h, out.iter().map(|o| o.0).collect()),
            confidence: Raster::from_vec(w, h, out.iter().map(|o| o.1).collect()),
        }
    }

    /// Corrupted mono-depth priors `(D_rel, D_abs)` of a frame.
    pub fn priors(&self, frame: usize, level: GridLevel) -> (Raster<f64>, Raster<f64>) {
        self.priors_from_render(frame, level, &self.render(frame, level))
    }

    fn priors_from_render(
        &self,
        frame: usize,
        level: GridLevel,
        render: &FrameRender,
    ) -> (Raster<f64>, Raster<f64>) {
        let disp = DisparityGrid::from_values(render.depth.map(|&z| 1.0 / z), level);
        let (a, b) = self.prior_affine[frame];
        let n = &self.spec.noise;
        let (w, h) = (disp.width(), disp.height());
        let st_rel = stream(Channel::PriorRel, frame, 0);
        let st_abs = stream(Channel::PriorAbs, frame, 0);
        let rel = Raster::from_fn(w, h, |x, y| {
            let d = disp.values.get(x, y);
            let e = if n.prior_sigma > 0.0 {
                normal_pair(self.spec.seed, st_rel, self.noise_index(level, x, y)).0
            } else {
                0.0
            };
            a * d + b + n.prior_sigma * e
        });
        let abs = Raster::from_fn(w, h, |x, y| {
            let d = disp.values.get(x, y);
            let e = if n.abs_sigma > 0.0 {
                normal_pair(self.spec.seed, st_abs, self.noise_index(level, x, y)).0
            } else {
                0.0
            };
            d + n.abs_sigma * e
        });
        (rel, abs)
    }

    /// Frame pairs at the configured offsets, `i < j`.
    pub fn offset_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_frames();
        let mut pairs = Vec::new();
        for &k in &self.spec.pair_offsets {
            for i in 0..n {
                if k > 0 && i + k < n {
                    pairs.push((i, i + k));
                }
            }
        }
        pairs
    }

    /// Mean noiseless flow magnitude of each offset pair, in full-res pixels,
    /// measured on the low-res sample grid.
    pub fn check_flow_range(&self) -> Result<(), SynthError> {
        let s = self.spec.low_res_factor as f64;
        let renders: Vec<FrameRender> = (0..self.n_frames())
            .into_par_iter()
            .map(|f| self.render(f, GridLevel::LowRes))
            .collect();
        for (i, j) in self.offset_pairs() {
            let r = &renders[i];
            let (w, h) = (r.depth.width(), r.depth.height());
            let mut sum = 0.0;
            let mut count = 0;
            for y in 0..h {
                for x in 0..w {
                    if let Some(t) = self.true_target(i, j, GridLevel::LowRes, x, y, r) {
                        sum += (t - Vector2::new(x as f64, y as f64)).norm() * s;
                        count += 1;
                    }
                }
            }
            let mean_flow = if count == 0 { 0.0 } else { sum / count as f64 };
            if !(FLOW_RANGE_PX.0..=FLOW_RANGE_PX.1).contains(&mean_flow) {
                return Err(SynthError::SpecInfeasible { i, j, mean_flow });
            }
        }
        Ok(())
    }

    /// GT poses with independent twist noise of standard deviation `sigma`
    /// on every component; the first pose is left exact.
    pub fn perturbed_poses(&self, sigma: f64) -> Vec<RigidTransform> {
        self.poses
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if k == 0 {
                    return *p;
                }
                let st = stream(Channel::Perturb, k, 0);
                let mut v = [0.0; 6];
                for c in 0..3 {
                    let (a, b) = normal_pair(self.spec.seed, st, c as u64);
                    v[2 * c] = a * sigma;
                    v[2 * c + 1] = b * sigma;
                }
                p.retract(&Twist::from_slice(&v))
            })
            .collect()
    }
}
