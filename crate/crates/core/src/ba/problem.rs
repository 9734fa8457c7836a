use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{Matrix2x6, Matrix3, Vector2, Vector3};

use super::BaError;
use crate::frame_graph::EdgeObservation;
use crate::geometry::{relative_pose, skew, Intrinsics, RigidTransform};
use crate::raster::DisparityGrid;

/// Disparity floor (normalized units) applied after every additive update.
pub const D_MIN: f64 = 1e-4;

/// One directed reprojection term between problem nodes `i → j`.
#[derive(Clone, Debug)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub obs: Arc<EdgeObservation>,
}

/// Mono-depth regularizer `w_d · Σ‖d_i − D_i^align‖²`.
#[derive(Clone, Debug)]
pub struct MonoPrior {
    pub align: Vec<DisparityGrid>,
    pub weight: f64,
}

/// Bundle-adjustment state: poses, low-res disparities and a shared focal.
///
/// The focal is stored normalized (`f_px = focal · focal_scale`, where
/// `focal_scale` is normally `max(width, height)` of the BA grid) and is
/// updated multiplicatively through its logarithm so it stays positive.
#[derive(Clone, Debug)]
pub struct BaProblem {
    /// Grid geometry: principal point and size. The focal fields are ignored.
    pub intrinsics: Intrinsics,
    pub focal: f64,
    pub focal_scale: f64,
    pub poses: Vec<RigidTransform>,
    pub disparities: Vec<DisparityGrid>,
    pub edges: Vec<Edge>,
    pub mono_prior: Option<MonoPrior>,
    pub fixed_poses: BTreeSet<usize>,
    /// Nodes whose disparities stay constant even when `optimize_disparity` is set.
    pub fixed_disparities: BTreeSet<usize>,
    pub optimize_focal: bool,
    pub optimize_disparity: bool,
}

impl BaProblem {
    /// A problem with the first pose fixed, disparities optimized and focal frozen.
    pub fn new(
        intrinsics: Intrinsics,
        focal: f64,
        poses: Vec<RigidTransform>,
        disparities: Vec<DisparityGrid>,
        edges: Vec<Edge>,
    ) -> Self {
        Self {
            focal_scale: intrinsics.max_dim(),
            intrinsics,
            focal,
            poses,
            disparities,
            edges,
            mono_prior: None,
            fixed_poses: BTreeSet::from([0]),
            fixed_disparities: BTreeSet::new(),
            optimize_focal: false,
            optimize_disparity: true,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.poses.len()
    }

    /// Focal length in pixels of the BA grid.
    #[inline]
    pub fn focal_px(&self) -> f64 {
        self.focal * self.focal_scale
    }

    /// Intrinsics with the current focal applied.
    pub fn camera(&self) -> Intrinsics {
        self.intrinsics.with_focal(self.focal_px())
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.intrinsics.width, self.intrinsics.height)
    }

    pub fn disparity_is_free(&self, node: usize) -> bool {
        self.optimize_disparity && !self.fixed_disparities.contains(&node)
    }

    pub fn validate(&self) -> Result<(), BaError> {
        let n = self.num_nodes();
        if self.disparities.len() != n {
            return Err(BaError::Inconsistent(format!(
                "{} poses but {} disparity grids",
                n,
                self.disparities.len()
            )));
        }
        if self.fixed_poses.is_empty() || self.fixed_poses.iter().any(|&i| i >= n) {
            return Err(BaError::GaugeNotFixed);
        }
        if !(self.focal > 0.0 && self.focal.is_finite() && self.focal_scale > 0.0) {
            return Err(BaError::Inconsistent(format!(
                "focal must be positive, got {}",
                self.focal
            )));
        }
        let (w, h) = self.grid_size();
        for d in &self.disparities {
            if d.width() != w || d.height() != h {
                return Err(BaError::Inconsistent(
                    "disparity grid shape differs from intrinsics".into(),
                ));
            }
        }
        for e in &self.edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(BaError::Inconsistent(format!(
                    "bad edge ({}, {})",
                    e.i, e.j
                )));
            }
            if e.obs.width() != w || e.obs.height() != h {
                return Err(BaError::Inconsistent(format!(
                    "edge ({}, {}) raster shape differs",
                    e.i, e.j
                )));
            }
        }
        if let Some(prior) = &self.mono_prior {
            if prior.align.len() != n || prior.weight < 0.0 {
                return Err(BaError::Inconsistent(
                    "mono prior does not match nodes".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Quantities shared by every pixel of one edge.
pub(crate) struct EdgeFrame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub k: Intrinsics,
}

impl EdgeFrame {
    pub fn new(problem: &BaProblem, edge: &Edge) -> Self {
        let rel = relative_pose(&problem.poses[edge.i], &problem.poses[edge.j]);
        Self {
            rotation: rel.rotation_matrix(),
            translation: rel.translation,
            k: problem.camera(),
        }
    }

    /// Homogeneous transformed point `P = R·ray + t·d`, or `None` behind camera j.
    #[inline]
    pub fn point(&self, u: f64, v: f64, d: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
        if !(d > 0.0) {
            return None;
        }
        let ray = self.k.ray(u, v);
        let p = self.rotation * ray + self.translation * d;
        if p.z <= crate::geometry::Z_MIN * d {
            return None;
        }
        Some((ray, p))
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let f = self.k.fx;
        Vector2::new(f * p.x / p.z + self.k.cx, f * p.y / p.z + self.k.cy)
    }
}

/// Derivatives of the induced correspondence `u_ij(p)` for one pixel.
///
/// Pose blocks are with respect to left-multiplicative twists `(ω, v)` of
/// `G_i` and `G_j`; the focal derivative is with respect to `log f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelJacobian {
    pub uv: Vector2<f64>,
    pub d_pose_i: Matrix2x6<f64>,
    pub d_pose_j: Matrix2x6<f64>,
    pub d_disparity: Vector2<f64>,
    pub d_log_focal: Vector2<f64>,
}

impl EdgeFrame {
    #[inline]
    pub fn jacobian(&self, u: f64, v: f64, d: f64) -> Option<PixelJacobian> {
        let (ray, p) = self.point(u, v, d)?;
        let f = self.k.fx;
        let iz = 1.0 / p.z;
        let (x, y) = (p.x * iz, p.y * iz);
        // dπ/dP
        let a = f * iz;
        let proj = |q: &Vector3<f64>| Vector2::new(a * (q.x - x * q.z), a * (q.y - y * q.z));

        let mut d_pose_j = Matrix2x6::zeros();
        let mut d_pose_i = Matrix2x6::zeros();
        // ∂P/∂ω_j = −[P]×, ∂P/∂v_j = d·I
        let neg_p_skew = -skew(&p);
        // ∂P/∂ω_i = R[ray]×, ∂P/∂v_i = −d·R
        let r_ray_skew = self.rotation * skew(&ray);
        for c in 0..3 {
            d_pose_j.set_column(c, &proj(&neg_p_skew.column(c).into_owned()));
            let mut e = Vector3::zeros();
            e[c] = d;
            d_pose_j.set_column(3 + c, &proj(&e));
            d_pose_i.set_column(c, &proj(&r_ray_skew.column(c).into_owned()));
            d_pose_i.set_column(3 + c, &proj(&(-self.rotation.column(c) * d)));
        }
        let d_disparity = proj(&self.translation);
        // ray = ((u−cx)/f, (v−cy)/f, 1) ⇒ ∂ray/∂f = (−ray_x/f, −ray_y/f, 0)
        let d_ray = Vector3::new(-ray.x / f, -ray.y / f, 0.0);
        let d_f = Vector2::new(x, y) + proj(&(self.rotation * d_ray));
        Some(PixelJacobian {
            uv: Vector2::new(f * x + self.k.cx, f * y + self.k.cy),
            d_pose_i,
            d_pose_j,
            d_disparity,
            d_log_focal: d_f * f,
        })
    }
}
