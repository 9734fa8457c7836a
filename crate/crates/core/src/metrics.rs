//! Trajectory (ATE, RTE, RRE) and depth (abs-rel, log RMSE, δ<1.25) metrics.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{relative_pose, umeyama_sim3_tolerant, RigidTransform};
use crate::raster::Raster;

pub const DEFAULT_MAX_DEPTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("no pixel is valid in both estimate and ground truth")]
    EmptyOverlap,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryOptions {
    /// Align the estimate to the ground truth with a Sim(3) fit of camera
    /// centers (collinear trajectories allowed).
    pub align: bool,
    /// Rescale the ground truth to unit path length first.
    pub normalize_length: bool,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            align: true,
            normalize_length: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryMetrics {
    /// RMSE of camera center distances.
    pub ate: f64,
    /// RMSE of consecutive relative-translation errors.
    pub rte: f64,
    /// Mean consecutive relative-rotation error in degrees.
    pub rre: f64,
}

fn path_length(centers: &[Vector3<f64>]) -> f64 {
    centers.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Scales a world→camera trajectory (camera centers) by `s`.
fn scale_poses(poses: &[RigidTransform], s: f64) -> Vec<RigidTransform> {
    poses
        .iter()
        .map(|p| RigidTransform::new(p.rotation, p.translation * s))
        .collect()
}

pub fn ate_rte_rre(
    estimated: &[RigidTransform],
    gt: &[RigidTransform],
    opts: &TrajectoryOptions,
) -> Result<TrajectoryMetrics, MetricsError> {
    if estimated.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(estimated.len(), gt.len()));
    }
    let n = gt.len();
    if n < 3 {
        return Err(MetricsError::DegenerateTrajectory(format!(
            "{n} poses, need at least 3"
        )));
    }
    let mut gt = gt.to_vec();
    if opts.normalize_length {
        let len = path_length(&gt.iter().map(|p| p.center()).collect::<Vec<_>>());
        if !(len > 0.0 && len.is_finite()) {
            return Err(MetricsError::DegenerateTrajectory(
                "zero path length".into(),
            ));
        }
        gt = scale_poses(&gt, 1.0 / len);
    }
    let gt_c: Vec<_> = gt.iter().map(|p| p.center()).collect();
    let est: Vec<RigidTransform> = if opts.align {
        let est_c: Vec<_> = estimated.iter().map(|p| p.center()).collect();
        let sim = umeyama_sim3_tolerant(&est_c, &gt_c)
            .map_err(|e| MetricsError::DegenerateTrajectory(e.to_string()))?;
        estimated.iter().map(|p| sim.transform_pose(p)).collect()
    } else {
        estimated.to_vec()
    };
    let ate = (est
        .iter()
        .zip(&gt_c)
        .map(|(p, c)| (p.center() - c).norm_squared())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let (mut t2, mut rot) = (0.0, 0.0);
    for k in 0..n - 1 {
        let de = relative_pose(&est[k], &est[k + 1]);
        let dg = relative_pose(&gt[k], &gt[k + 1]);
        let err = dg.inverse().compose(&de);
        t2 += err.translation.norm_squared();
        rot += err.rotation_angle().to_degrees();
    }
    Ok(TrajectoryMetrics {
        ate,
        rte: (t2 / (n - 1) as f64).sqrt(),
        rre: rot / (n - 1) as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthOptions {
    /// Fit one global scale and shift of the estimated disparity by least squares.
    pub fit_scale_shift: bool,
    /// Ground-truth depths beyond this are excluded.
    pub max_depth: f64,
}

impl Default for DepthOptions {
    fn default() -> Self {
        Self {
            fit_scale_shift: true,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub log_rmse: f64,
    /// Percentage of pixels with `max(d/d̂, d̂/d) < 1.25`.
    pub delta_125: f64,
    /// Fitted `(scale, shift)` of the estimated disparity.
    pub scale_shift: (f64, f64),
    pub pixels: usize,
}

fn usable(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Metrics over all frames jointly. Both inputs hold depth.
pub fn depth_metrics(
    estimated: &[Raster<f64>],
    gt: &[Raster<f64>],
    opts: &DepthOptions,
) -> Result<DepthMetrics, MetricsError> {
    if estimated.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(estimated.len(), gt.len()));
    }
    let mut pairs = Vec::new();
    for (e, g) in estimated.iter().zip(gt) {
        if !e.same_shape(g) {
            return Err(MetricsError::LengthMismatch(e.len(), g.len()));
        }
        for (&de, &dg) in e.iter().zip(g.iter()) {
            if usable(de) && usable(dg) && dg <= opts.max_depth {
                pairs.push((1.0 / de, dg));
            }
        }
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    let (scale, shift) = if opts.fit_scale_shift {
        fit_scale_shift(pairs.iter().map(|&(e, g)| (e, 1.0 / g)))
    } else {
        (1.0, 0.0)
    };
    let n = pairs.len() as f64;
    let (mut abs_rel, mut log2, mut good) = (0.0, 0.0, 0usize);
    for &(disp, dg) in &pairs {
        let d = 1.0 / (scale * disp + shift).max(f64::MIN_POSITIVE);
        abs_rel += (d - dg).abs() / dg;
        log2 += (d.ln() - dg.ln()).powi(2);
        if (d / dg).max(dg / d) < 1.25 {
            good += 1;
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        log_rmse: (log2 / n).sqrt(),
        delta_125: 100.0 * good as f64 / n,
        scale_shift: (scale, shift),
        pixels: pairs.len(),
    })
}

/// Least-squares `(s, b)` minimizing `Σ (s·x + b − y)²`; pure shift if `x` is constant.
pub fn fit_scale_shift(samples: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in samples {
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if det.abs() <= 1e-12 * (n * sxx).abs() || n < 2.0 {
        return (1.0, (sy - sx) / n.max(1.0));
    }
    let s = (n * sxy - sx * sy) / det;
    (s, (sy - s * sx) / n)
}

#[cfg(test)]
mod tests {
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::SimTransform;

    fn from_center(c: Vector3<f64>, r: UnitQuaternion<f64>) -> RigidTransform {
        RigidTransform::new(r, -(r * c))
    }

    fn sample_traj(n: usize, seed: f64) -> Vec<RigidTransform> {
        (0..n)
            .map(|k| {
                let t = k as f64 + seed;
                from_center(
                    Vector3::new(t.sin(), 0.3 * t, (0.7 * t).cos()),
                    UnitQuaternion::from_euler_angles(0.1 * t, 0.2 * t.sin(), -0.05 * t),
                )
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let g = sample_traj(6, 0.0);
        let m = ate_rte_rre(&g, &g, &TrajectoryOptions::default()).unwrap();
        assert!(m.ate < 1e-12 && m.rte < 1e-12 && m.rre < 1e-6, "{m:?}");
    }

    #[test]
    fn hand_computed_three_pose_case() {
        let id = UnitQuaternion::identity();
        let gt: Vec<_> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&x| from_center(Vector3::new(x, 0.0, 0.0), id))
            .collect();
        let mut est = gt.clone();
        est[1] = from_center(Vector3::new(1.0, 0.3, 0.0), id);
        let opts = TrajectoryOptions {
            align: false,
            normalize_length: false,
        };
        let m = ate_rte_rre(&est, &gt, &opts).unwrap();
        assert!((m.ate - 0.3 / 3f64.sqrt()).abs() < 1e-12);
        // both relative steps are off by 0.3 in y
        assert!((m.rte - 0.3).abs() < 1e-12);
        assert_eq!(m.rre, 0.0);

        // a relative rotation of 6° on the last step
        let mut est = gt.clone();
        let r = UnitQuaternion::from_euler_angles(0.0, 6f64.to_radians(), 0.0);
        est[2] = from_center(Vector3::new(2.0, 0.0, 0.0), r);
        let m = ate_rte_rre(&est, &gt, &opts).unwrap();
        assert!(m.ate < 1e-12);
        assert!((m.rre - 3.0).abs() < 1e-10, "{}", m.rre);
        // normalization shrinks translations by the path length of 2
        let est = [gt[0], from_center(Vector3::new(1.0, 0.3, 0.0), id), gt[2]];
        let norm = TrajectoryOptions {
            normalize_length: true,
            align: false,
        };
        let scaled: Vec<_> = est
            .iter()
            .map(|p| RigidTransform::new(p.rotation, p.translation * 0.5))
            .collect();
        let m = ate_rte_rre(&scaled, &gt, &norm).unwrap();
        assert!((m.ate - 0.15 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let g = sample_traj(2, 0.0);
        assert!(matches!(
            ate_rte_rre(&g, &g, &TrajectoryOptions::default()),
            Err(MetricsError::DegenerateTrajectory(_))
        ));
        let still = vec![RigidTransform::identity(); 4];
        assert!(ate_rte_rre(&still, &still, &TrajectoryOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn sim3_invariance(s in 0.1..10.0f64, a in -3.0..3.0f64, b in -1.0..1.0f64, tx in -5.0..5.0f64, seed in 0.0..10.0f64) {
            let gt = sample_traj(7, seed);
            let est: Vec<_> = gt.iter().enumerate().map(|(k, p)| {
                p.retract(&crate::geometry::Twist::from_slice(&[0.01 * (k as f64).sin(), 0.0, 0.02, 0.03 * (k as f64).cos(), -0.01, 0.0]))
            }).collect();
            let base = ate_rte_rre(&est, &gt, &TrajectoryOptions::default()).unwrap();
            let sim = SimTransform::new(s, UnitQuaternion::from_euler_angles(a, b, 0.3), Vector3::new(tx, 1.0, -2.0)).unwrap();
            let moved: Vec<_> = est.iter().map(|p| sim.transform_pose(p)).collect();
            let m = ate_rte_rre(&moved, &gt, &TrajectoryOptions::default()).unwrap();
            prop_assert!((m.ate - base.ate).abs() < 1e-8);
            prop_assert!((m.rte - base.rte).abs() < 1e-8);
            prop_assert!((m.rre - base.rre).abs() < 1e-8);
            let exact: Vec<_> = gt.iter().map(|p| sim.transform_pose(p)).collect();
            let z = ate_rte_rre(&exact, &gt, &TrajectoryOptions::default()).unwrap();
            prop_assert!(z.ate < 1e-8 && z.rte < 1e-8 && z.rre < 1e-6);
        }
    }

    #[test]
    fn depth_identity_and_double() {
        let gt = vec![Raster::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0])];
        let m = depth_metrics(&gt, &gt, &DepthOptions::default()).unwrap();
        assert!(m.abs_rel < 1e-12 && m.log_rmse < 1e-12);
        assert_eq!(m.delta_125, 100.0);
        let double = vec![gt[0].map(|d| 2.0 * d)];
        let raw = DepthOptions {
            fit_scale_shift: false,
            ..Default::default()
        };
        let m = depth_metrics(&double, &gt, &raw).unwrap();
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        assert!((m.log_rmse - 2f64.ln()).abs() < 1e-12);
        assert_eq!(m.delta_125, 0.0);
        // fitting undoes the scale
        let m = depth_metrics(&double, &gt, &DepthOptions::default()).unwrap();
        assert!(m.abs_rel < 1e-12);
    }

    #[test]
    fn far_and_invalid_pixels_are_excluded() {
        let gt = vec![Raster::from_vec(2, 2, vec![1.0, 150.0, f64::NAN, 2.0])];
        let est = vec![Raster::from_vec(2, 2, vec![1.1, 1.0, 1.0, f64::INFINITY])];
        let raw = DepthOptions {
            fit_scale_shift: false,
            ..Default::default()
        };
        let m = depth_metrics(&est, &gt, &raw).unwrap();
        assert_eq!(m.pixels, 1);
        assert!((m.abs_rel - 0.1).abs() < 1e-12);
        let none = vec![Raster::filled(2, 2, f64::NAN)];
        assert_eq!(
            depth_metrics(&none, &gt, &raw),
            Err(MetricsError::EmptyOverlap)
        );
    }

    proptest! {
        #[test]
        fn depth_matches_brute_force(vals in proptest::collection::vec((0.5..50.0f64, 0.5..50.0f64), 8)) {
            let est = vec![Raster::from_vec(4, 1, vals[..4].iter().map(|v| v.0).collect()), Raster::from_vec(4, 1, vals[4..].iter().map(|v| v.0).collect())];
            let gt = vec![Raster::from_vec(4, 1, vals[..4].iter().map(|v| v.1).collect()), Raster::from_vec(4, 1, vals[4..].iter().map(|v| v.1).collect())];
            let raw = DepthOptions { fit_scale_shift: false, ..Default::default() };
            let m = depth_metrics(&est, &gt, &raw).unwrap();
            let n = vals.len() as f64;
            let abs_rel = vals.iter().map(|(e, g)| (e - g).abs() / g).sum::<f64>() / n;
            let log_rmse = (vals.iter().map(|(e, g)| (e.ln() - g.ln()).powi(2)).sum::<f64>() / n).sqrt();
            let delta = 100.0 * vals.iter().filter(|(e, g)| (e / g).max(g / e) < 1.25).count() as f64 / n;
            prop_assert!((m.abs_rel - abs_rel).abs() < 1e-10);
            prop_assert!((m.log_rmse - log_rmse).abs() < 1e-10);
            prop_assert!((m.delta_125 - delta).abs() < 1e-10);
        }

        #[test]
        fn depth_invariant_to_affine_disparity(s in 0.2..5.0f64, b in -0.005..0.05f64, vals in proptest::collection::vec(1.0..20.0f64, 12)) {
            let gt = vec![Raster::from_vec(4, 3, vals.clone())];
            let noisy: Vec<f64> = vals.iter().enumerate().map(|(k, d)| d * (1.0 + 0.05 * (k as f64).sin())).collect();
            let est = vec![Raster::from_vec(4, 3, noisy.clone())];
            let corrupted = vec![Raster::from_vec(4, 3, noisy.iter().map(|d| 1.0 / (s / d + b)).collect())];
            let a = depth_metrics(&est, &gt, &DepthOptions::default()).unwrap();
            let c = depth_metrics(&corrupted, &gt, &DepthOptions::default()).unwrap();
            prop_assert!((a.abs_rel - c.abs_rel).abs() < 1e-8);
            prop_assert!((a.log_rmse - c.log_rmse).abs() < 1e-8);
            prop_assert!((a.delta_125 - c.delta_125).abs() < 1e-8);
        }
    }
}
