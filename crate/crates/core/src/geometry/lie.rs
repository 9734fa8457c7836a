//! SE(3) and Sim(3) transforms with exponential/logarithm maps.
//!
//! Poses map world coordinates into camera coordinates. Twists are ordered
//! `(ω, v)`: three rotational then three translational components.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

use super::GeometryError;

/// Below this rotation angle the exp/log maps switch to series expansions.
const SMALL_ANGLE: f64 = 1e-8;
/// Below this angle the Jacobian coefficients use their Taylor series.
const SERIES_ANGLE: f64 = 1e-3;

/// Largest rotation angle `se3_log` accepts.
pub const MAX_LOG_ANGLE: f64 = PI - 1e-6;

#[inline]
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// A tangent vector of SE(3), `(ω, v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self(Vector6::from_column_slice(&s[..6]))
    }

    #[inline]
    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    #[inline]
    pub fn v(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0 * s)
    }
}

/// Quaternion of the rotation `exp([ω]×)`.
pub fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    let q = Quaternion::new(w, k * omega.x, k * omega.y, k * omega.z);
    UnitQuaternion::new_normalize(q)
}

/// Rotation vector of a unit quaternion, with the angle in `[0, π]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let vn = v.norm();
    if vn < SMALL_ANGLE {
        // atan2(vn, w) ≈ vn/w − vn³/(3w³)
        v * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w))
    } else {
        v * (2.0 * vn.atan2(w) / vn)
    }
}

/// Left Jacobian `V(ω)` of SO(3); maps `v` to the translation of `exp(ω, v)`.
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let w2 = w * w;
    if theta < SERIES_ANGLE {
        Matrix3::identity() + w * (0.5 - theta2 / 24.0) + w2 * (1.0 / 6.0 - theta2 / 120.0)
    } else {
        let s = (0.5 * theta).sin();
        Matrix3::identity()
            + w * (2.0 * s * s / theta2)
            + w2 * ((theta - theta.sin()) / (theta2 * theta))
    }
}

fn left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let w2 = w * w;
    if theta < SERIES_ANGLE {
        Matrix3::identity() - w * 0.5 + w2 * (1.0 / 12.0 + theta2 / 720.0)
    } else {
        let half = 0.5 * theta;
        let c = (1.0 - half / half.tan()) / theta2;
        Matrix3::identity() - w * 0.5 + w2 * c
    }
}

/// A rigid transform `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// The SE(3) exponential: Rodrigues rotation, left-Jacobian translation.
    pub fn exp(twist: &Twist) -> Self {
        let omega = twist.omega();
        Self {
            rotation: so3_exp(&omega),
            translation: left_jacobian(&omega) * twist.v(),
        }
    }

    /// The SE(3) logarithm; fails when the rotation angle reaches `π − 1e-6`.
    pub fn log(&self) -> Result<Twist, GeometryError> {
        let angle = self.rotation_angle();
        if angle >= MAX_LOG_ANGLE {
            return Err(GeometryError::AngleNearPi { angle });
        }
        let omega = so3_log(&self.rotation);
        let v = left_jacobian_inverse(&omega) * self.translation;
        Ok(Twist::new(omega, v))
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation.inverse();
        RigidTransform {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Left-multiplicative retraction `exp(δ) ∘ self`.
    pub fn retract(&self, delta: &Twist) -> RigidTransform {
        RigidTransform::exp(delta).compose(self)
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Tangent-space distance to the identity, `‖log(self)‖`.
    pub fn tangent_norm(&self) -> Result<f64, GeometryError> {
        Ok(self.log()?.norm())
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

pub fn se3_exp(v: &Twist) -> RigidTransform {
    RigidTransform::exp(v)
}

pub fn se3_log(t: &RigidTransform) -> Result<Twist, GeometryError> {
    t.log()
}

/// Relative pose `G_j ∘ G_i⁻¹`, which maps camera-i coordinates into camera j.
pub fn relative_pose(gi: &RigidTransform, gj: &RigidTransform) -> RigidTransform {
    gj.compose(&gi.inverse())
}

/// Geodesic distance `‖log(T⁻¹ ∘ G)‖₂` between two poses.
pub fn pose_geodesic_error(t: &RigidTransform, g: &RigidTransform) -> Result<f64, GeometryError> {
    t.inverse().compose(g).tangent_norm()
}

/// A similarity transform `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl SimTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(
        scale: f64,
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::NonPositiveScale { scale });
        }
        Ok(Self {
            scale,
            rotation: renormalize(rotation),
            translation,
        })
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn inverse(&self) -> SimTransform {
        let r_inv = self.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        SimTransform {
            scale: s_inv,
            rotation: r_inv,
            translation: -(r_inv * self.translation) * s_inv,
        }
    }

    /// Moves a world→camera pose into the transformed world frame.
    ///
    /// The camera center is mapped by `self` and the orientation rotated, so
    /// the returned pose observes transformed points exactly as the original
    /// observed the untransformed ones (up to the depth scale `s`).
    pub fn transform_pose(&self, pose: &RigidTransform) -> RigidTransform {
        let center = self.apply(&pose.center());
        let rotation = pose.rotation * self.rotation.inverse();
        RigidTransform::new(rotation, -(rotation * center))
    }
}
