use nalgebra::{Vector2, Vector3};

use super::{GeometryError, RigidTransform};
use crate::raster::{DisparityGrid, Raster};

/// Points at or closer than this depth (scene units) are masked rather than projected.
pub const Z_MIN: f64 = 1e-6;

/// Pinhole intrinsics shared by every frame of a video.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self))
        }
    }

    /// Intrinsics of the grid that keeps every `factor`-th pixel starting at 0.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Same principal point and size, focal replaced (fx = fy = focal).
    pub fn with_focal(&self, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            ..*self
        }
    }

    /// `max(width, height)`, the focal normalizer.
    pub fn max_dim(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    /// `K⁻¹·(u, v, 1)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if p.z <= Z_MIN {
            return Err(GeometryError::BehindCamera);
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Projects camera-frame points; points with `z ≤ Z_MIN` come back as `BehindCamera`.
    pub fn project(&self, points: &[Vector3<f64>]) -> Vec<Result<Vector2<f64>, GeometryError>> {
        points.iter().map(|p| self.project_point(p)).collect()
    }

    #[inline]
    pub fn backproject_pixel(
        &self,
        u: f64,
        v: f64,
        disparity: f64,
    ) -> Result<Vector3<f64>, GeometryError> {
        if !(disparity > 0.0 && disparity.is_finite()) {
            return Err(GeometryError::InvalidDisparity);
        }
        Ok(self.ray(u, v) / disparity)
    }

    /// Backprojects every grid pixel; masked or non-positive disparities yield `InvalidDisparity`.
    pub fn backproject(&self, d: &DisparityGrid) -> Raster<Result<Vector3<f64>, GeometryError>> {
        Raster::from_fn(d.width(), d.height(), |x, y| {
            let i = d.values.index_of(x, y);
            match d.at(i) {
                Some(disp) => self.backproject_pixel(x as f64, y as f64, disp),
                None => Err(GeometryError::InvalidDisparity),
            }
        })
    }
}

/// Target pixel of `p` in frame j, using the homogeneous point `(ray, d)`:
/// `P = R·ray + t·d` projects identically to `G_ij·(ray/d)`.
#[inline]
pub fn warp_pixel(
    g_ij: &RigidTransform,
    k: &Intrinsics,
    u: f64,
    v: f64,
    disparity: f64,
) -> Option<Vector2<f64>> {
    if !(disparity > 0.0) {
        return None;
    }
    let p = g_ij.rotation * k.ray(u, v) + g_ij.translation * disparity;
    if p.z <= Z_MIN * disparity {
        return None;
    }
    Some(Vector2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Dense correspondence field induced by a relative pose and a disparity map.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// Target pixel coordinates in frame j (not displacements).
    pub coords: Raster<Vector2<f64>>,
    pub valid: Raster<bool>,
}

impl FlowField {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// `u_ij(p) = π(G_ij ∘ π⁻¹(p, d_i, K⁻¹), K)` on every pixel of the disparity grid.
pub fn induced_flow(g_ij: &RigidTransform, d_i: &DisparityGrid, k: &Intrinsics) -> FlowField {
    let (w, h) = (d_i.width(), d_i.height());
    let mut coords = Raster::filled(w, h, Vector2::new(f64::NAN, f64::NAN));
    let mut valid = Raster::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if let Some(d) = d_i.at(i) {
                if let Some(uv) = warp_pixel(g_ij, k, x as f64, y as f64, d) {
                    coords[i] = uv;
                    valid[i] = true;
                }
            }
        }
    }
    FlowField { coords, valid }
}
