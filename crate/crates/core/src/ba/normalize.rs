use super::BaError;
use crate::geometry::RigidTransform;
use crate::raster::{percentile, DisparityGrid};

/// Target value of the 98th disparity percentile after normalization.
pub const DISPARITY_P98_TARGET: f64 = 2.0;

/// Rescales all grids by one global factor so the 98th percentile of valid
/// disparities is 2. Returns the factor `s`; translations must be divided by
/// `s` (see [`rescale_translation`]) to keep induced flow unchanged.
pub fn normalize_disparity(grids: &mut [DisparityGrid]) -> Result<f64, BaError> {
    let values: Vec<f64> = grids
        .iter()
        .flat_map(|g| (0..g.values.len()).filter_map(move |p| g.at(p)))
        .collect();
    let p98 = percentile(&values, 98.0).ok_or(BaError::AllInvalid)?;
    if !(p98 > 0.0) {
        return Err(BaError::AllInvalid);
    }
    let s = DISPARITY_P98_TARGET / p98;
    for g in grids.iter_mut() {
        for p in 0..g.values.len() {
            if g.valid[p] {
                g.values[p] *= s;
            }
        }
    }
    Ok(s)
}

/// Pose whose translation is divided by the disparity scale `s`.
pub fn rescale_translation(pose: &RigidTransform, s: f64) -> RigidTransform {
    RigidTransform::new(pose.rotation, pose.translation / s)
}

/// `f / max(width, height)`.
pub fn normalize_focal(f_pixels: f64, width: usize, height: usize) -> f64 {
    f_pixels / width.max(height) as f64
}

pub fn denormalize_focal(f_norm: f64, width: usize, height: usize) -> f64 {
    f_norm * width.max(height) as f64
}
