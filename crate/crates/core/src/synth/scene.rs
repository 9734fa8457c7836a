use nalgebra::Vector3;

use crate::geometry::{se3_exp, RigidTransform, Twist};

/// Star-shaped closed "room": the wall distance from `center` along a unit
/// direction `u` is `base · (1 + amplitude · s(u))` with `s` a smooth random
/// field bounded by 1 in magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub center: Vector3<f64>,
    pub base_depth: f64,
    pub amplitude: f64,
    /// Angular correlation length (rad); larger is smoother.
    pub smoothness: f64,
    /// `(weight, frequency vector, phase)`; weights sum to 1 in magnitude.
    pub(crate) waves: Vec<(f64, Vector3<f64>, f64)>,
}

impl Background {
    pub fn radius(&self, dir: &Vector3<f64>) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|(a, k, ph)| a * (k.dot(dir) + ph).sin())
            .sum();
        self.base_depth * (1.0 + self.amplitude * s)
    }

    pub fn min_radius(&self) -> f64 {
        self.base_depth * (1.0 - self.amplitude)
    }

    pub fn max_radius(&self) -> f64 {
        self.base_depth * (1.0 + self.amplitude)
    }

    /// Signed distance proxy: negative inside the room.
    fn inside(&self, p: &Vector3<f64>) -> f64 {
        let q = p - self.center;
        let n = q.norm();
        if n == 0.0 {
            return -self.base_depth;
        }
        n - self.radius(&(q / n))
    }

    /// Ray parameter of the first wall hit from `origin` along `dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        if self.inside(origin) >= 0.0 {
            return None;
        }
        let len = dir.norm();
        let far = ((origin - self.center).norm() + self.max_radius()) / len * 1.01;
        const MARCH: usize = 96;
        let mut lo = 0.0;
        let mut hi = None;
        for k in 1..=MARCH {
            let s = far * k as f64 / MARCH as f64;
            if self.inside(&(origin + dir * s)) >= 0.0 {
                hi = Some(s);
                break;
            }
            lo = s;
        }
        let mut hi = hi?;
        // Illinois false position on the bracket
        let f = |s: f64| self.inside(&(origin + dir * s));
        let (mut f_lo, mut f_hi) = (f(lo), f(hi));
        let tol = 1e-14 * self.base_depth;
        let mut side = 0;
        let mut x = hi;
        for _ in 0..100 {
            x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            let fx = f(x);
            if fx.abs() <= tol || hi - lo <= 1e-15 * hi {
                break;
            }
            if fx >= 0.0 {
                (hi, f_hi) = (x, fx);
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            } else {
                (lo, f_lo) = (x, fx);
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            }
        }
        Some(x)
    }
}

/// Axis-aligned box in its own frame moving with a constant world twist:
/// object-to-world pose at frame k is `exp(k·ξ) ∘ translation(center)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mover {
    pub center: Vector3<f64>,
    pub half_extent: Vector3<f64>,
    pub velocity: Twist,
}

impl Mover {
    pub fn pose(&self, frame: usize) -> RigidTransform {
        se3_exp(&self.velocity.scale(frame as f64))
            .compose(&RigidTransform::from_translation(self.center))
    }

    /// Slab test in the object frame. Returns the entry parameter if positive.
    pub fn intersect(
        &self,
        frame: usize,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<f64> {
        let inv = self.pose(frame).inverse();
        let o = inv.transform_point(origin);
        let d = inv.rotation * dir;
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let (lo, hi) = (-self.half_extent[a], self.half_extent[a]);
            if d[a].abs() < 1e-15 {
                if o[a] < lo || o[a] > hi {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

/// What a camera ray hits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hit {
    Background { depth: f64 },
    Mover { depth: f64, index: usize },
}

impl Hit {
    pub fn depth(&self) -> f64 {
        match *self {
            Hit::Background { depth } | Hit::Mover { depth, .. } => depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub background: Background,
    pub movers: Vec<Mover>,
}

impl Scene {
    /// Casts the ray through camera-frame direction `ray` (z = 1) of a camera
    /// with world-to-camera pose `pose` at `frame`. Depth equals the ray parameter.
    pub fn cast(&self, pose: &RigidTransform, frame: usize, ray: &Vector3<f64>) -> Option<Hit> {
        let cam_to_world = pose.inverse();
        let origin = cam_to_world.translation;
        let dir = cam_to_world.rotation * ray;
        let mut best = self
            .background
            .intersect(&origin, &dir)
            .map(|depth| Hit::Background { depth });
        for (index, m) in self.movers.iter().enumerate() {
            if let Some(depth) = m.intersect(frame, &origin, &dir) {
                if best.is_none_or(|b| depth < b.depth()) {
                    best = Some(Hit::Mover { depth, index });
                }
            }
        }
        best
    }
}
