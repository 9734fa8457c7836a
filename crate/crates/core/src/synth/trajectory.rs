use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

use crate::geometry::RigidTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Static,
    Rotational,
    Forward,
    Orbit,
    Lateral,
}

impl TrajectoryKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "static" => Self::Static,
            "rotational" => Self::Rotational,
            "forward" => Self::Forward,
            "orbit" => Self::Orbit,
            "lateral" => Self::Lateral,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Rotational => "rotational",
            Self::Forward => "forward",
            Self::Orbit => "orbit",
            Self::Lateral => "lateral",
        }
    }
}

/// Camera-to-world placement turned into a world-to-camera pose.
fn pose_from_camera(rotation_cw: UnitQuaternion<f64>, center: Vector3<f64>) -> RigidTransform {
    let r = rotation_cw.inverse();
    RigidTransform::new(r, -(r * center))
}

/// World-to-camera poses of a canonical trajectory starting at the identity.
///
/// * `Rotational`: yaw sweep of `magnitude` rad per frame, camera fixed at the origin.
/// * `Forward`: `magnitude` per frame along +z. `wobble` (rad) adds a small
///   periodic pitch/yaw so the focal length becomes observable; 0 keeps it a pure translation.
/// * `Orbit`: one full circle of radius `magnitude` around the point `(0, 0, magnitude)`,
///   always facing it.
/// * `Lateral`: `magnitude` per frame along +x.
pub fn trajectory_family(
    kind: TrajectoryKind,
    n_frames: usize,
    magnitude: f64,
    wobble: f64,
) -> Vec<RigidTransform> {
    (0..n_frames)
        .map(|k| {
            let t = k as f64;
            match kind {
                TrajectoryKind::Static => RigidTransform::identity(),
                TrajectoryKind::Rotational => pose_from_camera(
                    UnitQuaternion::from_euler_angles(0.0, t * magnitude, 0.0),
                    Vector3::zeros(),
                ),
                TrajectoryKind::Forward => {
                    let phase = 2.0 * PI * t / 12.0;
                    let rot = UnitQuaternion::from_euler_angles(
                        wobble * phase.sin(),
                        wobble * (1.0 - phase.cos()),
                        0.0,
                    );
                    pose_from_camera(rot, Vector3::new(0.0, 0.0, t * magnitude))
                }
                TrajectoryKind::Orbit => {
                    let theta = 2.0 * PI * t / n_frames as f64;
                    let focus = Vector3::new(0.0, 0.0, magnitude);
                    let center = focus + magnitude * Vector3::new(theta.sin(), 0.0, -theta.cos());
                    pose_from_camera(UnitQuaternion::from_euler_angles(0.0, -theta, 0.0), center)
                }
                TrajectoryKind::Lateral => pose_from_camera(
                    UnitQuaternion::identity(),
                    Vector3::new(t * magnitude, 0.0, 0.0),
                ),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::relative_pose;

    #[test]
    fn static_is_identity() {
        for p in trajectory_family(TrajectoryKind::Static, 5, 1.0, 0.0) {
            assert_eq!(p, RigidTransform::identity());
        }
    }

    #[test]
    fn rotational_has_zero_baseline() {
        let poses = trajectory_family(TrajectoryKind::Rotational, 6, 0.05, 0.0);
        for a in &poses {
            for b in &poses {
                assert!(relative_pose(a, b).translation.norm() < 1e-15);
            }
        }
        assert!((poses[5].rotation_angle() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn forward_final_translation() {
        let poses = trajectory_family(TrajectoryKind::Forward, 10, 0.1, 0.0);
        assert!((poses[9].translation.norm() - 0.9).abs() < 1e-12);
        assert!((poses[9].center() - Vector3::new(0.0, 0.0, 0.9)).norm() < 1e-12);
    }

    #[test]
    fn orbit_faces_focus_and_closes() {
        let poses = trajectory_family(TrajectoryKind::Orbit, 16, 2.0, 0.0);
        let focus = Vector3::new(0.0, 0.0, 2.0);
        for p in &poses {
            let c = p.transform_point(&focus);
            assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && (c.z - 2.0).abs() < 1e-12);
        }
        assert!(poses[0].center().norm() < 1e-12);
    }

    #[test]
    fn lateral_moves_along_x() {
        let poses = trajectory_family(TrajectoryKind::Lateral, 4, 0.2, 0.0);
        assert!((poses[3].center() - Vector3::new(0.6, 0.0, 0.0)).norm() < 1e-12);
    }
}
