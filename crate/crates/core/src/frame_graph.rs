//! Frame graph of image pairs, keyframe selection and BA weight combination.
//!
//! Motion maps store the probability that a pixel belongs to the STATIC scene
//! (1 = static, 0 = moving). Multiplying them into the flow confidence
//! therefore suppresses moving content in the reprojection cost.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::{induced_flow, relative_pose, Intrinsics, RigidTransform};
use crate::raster::{DisparityGrid, Raster};

pub const DEFAULT_KEYFRAME_THRESHOLD_PX: f64 = 16.0;
pub const DEFAULT_WINDOW_RADIUS: usize = 3;
pub const DEFAULT_PROXIMITY_PX: f64 = 24.0;

/// Fraction of pixels that must land inside the other image for the proximity rule.
const MIN_PROXIMITY_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("raster shapes differ: {0}×{1} vs {2}×{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("no valid pixels to measure flow distance")]
    NoValidPixels,
    #[error("self-edge ({0}, {0}) is not allowed")]
    SelfEdge(usize),
    #[error("edge ({0}, {1}) already present")]
    DuplicateEdge(usize, usize),
    #[error("edge endpoint {0} is not a registered node")]
    UnknownNode(usize),
}

/// Per-pixel object-static probability on the low-res grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionMap(pub Raster<f64>);

impl MotionMap {
    pub fn all_static(width: usize, height: usize) -> Self {
        Self(Raster::filled(width, height, 1.0))
    }
}

/// Observed correspondences for one directed frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeObservation {
    /// Target pixel coordinates `û_ij(p)` in frame j.
    pub target: Raster<Vector2<f64>>,
    /// Flow confidence `ŵ_ij` in [0, 1].
    pub confidence: Raster<f64>,
    /// Final BA weight `w̃_ij = ŵ_ij · m_i` in [0, 1].
    pub weight: Raster<f64>,
}

impl EdgeObservation {
    /// Builds an observation from flow displacements; non-finite flow gets zero weight.
    pub fn from_flow(
        flow: &Raster<Vector2<f64>>,
        confidence: Raster<f64>,
        motion: Option<&MotionMap>,
    ) -> Result<Self, GraphError> {
        check_shape(flow, &confidence)?;
        let target = Raster::from_fn(flow.width(), flow.height(), |x, y| {
            Vector2::new(x as f64, y as f64) + flow.get(x, y)
        });
        let confidence = Raster::from_fn(flow.width(), flow.height(), |x, y| {
            let f = flow.get(x, y);
            if f.x.is_finite() && f.y.is_finite() {
                confidence.get(x, y).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        let weight = match motion {
            Some(m) => combine_weights(&confidence, m)?,
            None => confidence.clone(),
        };
        Ok(Self {
            target,
            confidence,
            weight,
        })
    }

    pub fn width(&self) -> usize {
        self.target.width()
    }

    pub fn height(&self) -> usize {
        self.target.height()
    }

    /// Mean observed displacement `‖û_ij(p) − p‖` over pixels with positive weight.
    pub fn mean_observed_flow(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..self.height() {
            for x in 0..self.width() {
                let i = y * self.width() + x;
                if self.weight[i] > 0.0 {
                    sum += (self.target[i] - Vector2::new(x as f64, y as f64)).norm();
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

fn check_shape<A, B>(a: &Raster<A>, b: &Raster<B>) -> Result<(), GraphError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(GraphError::ShapeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ))
    }
}

/// `w̃ = ŵ · m`, clamped to [0, 1].
pub fn combine_weights(
    confidence: &Raster<f64>,
    motion: &MotionMap,
) -> Result<Raster<f64>, GraphError> {
    check_shape(confidence, &motion.0)?;
    let data = confidence
        .iter()
        .zip(motion.0.iter())
        .map(|(&w, &m)| (w * m).clamp(0.0, 1.0))
        .collect();
    Ok(Raster::from_vec(
        confidence.width(),
        confidence.height(),
        data,
    ))
}

/// Mean ego-motion induced displacement between frames i and j, measured with i's disparity.
pub fn mean_flow_distance(
    g_i: &RigidTransform,
    g_j: &RigidTransform,
    d_i: &DisparityGrid,
    k: &Intrinsics,
) -> Result<f64, GraphError> {
    Ok(flow_stats(g_i, g_j, d_i, k)?.0)
}

/// (mean distance over valid pixels, fraction of all pixels landing inside frame j)
fn flow_stats(
    g_i: &RigidTransform,
    g_j: &RigidTransform,
    d_i: &DisparityGrid,
    k: &Intrinsics,
) -> Result<(f64, f64), GraphError> {
    let field = induced_flow(&relative_pose(g_i, g_j), d_i, k);
    let (w, h) = (d_i.width(), d_i.height());
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut inside = 0usize;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !field.valid[i] {
                continue;
            }
            let uv = field.coords[i];
            sum += (uv - Vector2::new(x as f64, y as f64)).norm();
            n += 1;
            if uv.x >= 0.0 && uv.y >= 0.0 && uv.x <= (w - 1) as f64 && uv.y <= (h - 1) as f64 {
                inside += 1;
            }
        }
    }
    if n == 0 {
        return Err(GraphError::NoValidPixels);
    }
    Ok((sum / n as f64, inside as f64 / (w * h) as f64))
}

/// A candidate becomes a keyframe once the mean induced flow from the last
/// keyframe reaches `threshold_px` (inclusive).
pub fn should_add_keyframe(
    candidate: &RigidTransform,
    last_keyframe: &RigidTransform,
    last_disparity: &DisparityGrid,
    k: &Intrinsics,
    threshold_px: f64,
) -> bool {
    mean_flow_distance(last_keyframe, candidate, last_disparity, k)
        .map(|d| d >= threshold_px)
        .unwrap_or(false)
}

/// Pairs among `poses` (indexed by node): every pair within `window_radius`
/// in node order, plus distant pairs whose mean induced flow is below
/// `proximity_px` with sufficient overlap. Both directions are always added.
pub fn build_edges(
    poses: &[RigidTransform],
    disparities: &[DisparityGrid],
    k: &Intrinsics,
    window_radius: usize,
    proximity_px: f64,
) -> Vec<(usize, usize)> {
    let n = poses.len();
    let mut edges = BTreeSet::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let temporal = b - a <= window_radius;
            let close = !temporal
                && flow_stats(&poses[a], &poses[b], &disparities[a], k)
                    .map(|(dist, overlap)| dist < proximity_px && overlap >= MIN_PROXIMITY_OVERLAP)
                    .unwrap_or(false);
            if temporal || close {
                edges.insert((a, b));
                edges.insert((b, a));
            }
        }
    }
    edges.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameNode {
    pub frame: usize,
    pub keyframe: bool,
}

/// Frame graph `P`: registered frames plus directed edges carrying observations.
#[derive(Clone, Debug, Default)]
pub struct FrameGraph {
    nodes: BTreeMap<usize, bool>,
    edges: BTreeMap<(usize, usize), Arc<EdgeObservation>>,
}

impl FrameGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, frame: usize, keyframe: bool) {
        self.nodes.insert(frame, keyframe);
    }

    pub fn set_keyframe(&mut self, frame: usize, keyframe: bool) -> Result<(), GraphError> {
        match self.nodes.get_mut(&frame) {
            Some(k) => {
                *k = keyframe;
                Ok(())
            }
            None => Err(GraphError::UnknownNode(frame)),
        }
    }

    pub fn add_edge(
        &mut self,
        i: usize,
        j: usize,
        obs: Arc<EdgeObservation>,
    ) -> Result<(), GraphError> {
        if i == j {
            return Err(GraphError::SelfEdge(i));
        }
        for n in [i, j] {
            if !self.nodes.contains_key(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        if self.edges.contains_key(&(i, j)) {
            return Err(GraphError::DuplicateEdge(i, j));
        }
        self.edges.insert((i, j), obs);
        Ok(())
    }

    pub fn contains_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains_key(&(i, j))
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<&Arc<EdgeObservation>> {
        self.edges.get(&(i, j))
    }

    pub fn nodes(&self) -> impl Iterator<Item = FrameNode> + '_ {
        self.nodes
            .iter()
            .map(|(&frame, &keyframe)| FrameNode { frame, keyframe })
    }

    pub fn keyframes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|(_, &k)| k)
            .map(|(&f, _)| f)
            .collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.keys().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// True when every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.edges
            .keys()
            .all(|&(i, j)| self.edges.contains_key(&(j, i)))
    }
}
