//! Epistemic uncertainty from the Gauss–Newton Hessian diagonal, and the
//! gating rules for the mono-depth prior weight and focal optimization.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::ba::{assemble_system, BaProblem, BlockSystem};
use crate::raster::{median, Raster};

/// Floor added to the Hessian diagonal before inversion.
pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_GAMMA_D: f64 = 1e-4;
pub const DEFAULT_BETA_D: f64 = 0.05;
pub const DEFAULT_TAU_F: f64 = 50.0;

/// σ² = 1 / (diag(H) + ε) for every unknown, camera parameters first.
pub fn epistemic_sigma(system: &BlockSystem) -> Vec<f64> {
    system
        .diagonal()
        .into_iter()
        .map(|h| 1.0 / (h + EPSILON))
        .collect()
}

/// Disparity variances reshaped per node; `None` for nodes whose disparity is not free.
pub fn disparity_sigma_rasters(
    system: &BlockSystem,
    width: usize,
    height: usize,
) -> Vec<Option<Raster<f64>>> {
    let layout = &system.layout;
    layout
        .disp_offset
        .iter()
        .map(|off| {
            off.map(|o| {
                Raster::from_vec(
                    width,
                    height,
                    system.h_disp[o..o + layout.pixels]
                        .iter()
                        .map(|h| 1.0 / (h + EPSILON))
                        .collect(),
                )
            })
        })
        .collect()
}

/// `w_d = γ_d · exp(−β_d · median_hd)`.
pub fn depth_reg_weight(median_hd: f64, gamma_d: f64, beta_d: f64) -> f64 {
    gamma_d * (-beta_d * median_hd).exp()
}

/// Focal optimization stays enabled iff `focal_h ≥ τ_f`.
pub fn focal_gate(focal_h: f64, tau_f: f64) -> bool {
    focal_h >= tau_f
}

/// Hessian entry of the normalized focal `f_norm` (the solver's focal
/// unknown is `log f_norm`, so the entry is rescaled by `1/f_norm²`).
pub fn focal_information(system: &BlockSystem, focal_norm: f64) -> f64 {
    match system.layout.focal_index {
        Some(fi) => system.h_cam[(fi, fi)] / (focal_norm * focal_norm),
        None => 0.0,
    }
}

/// Information on `log f` left after eliminating every pose and disparity
/// unknown: the focal entry of the inverse marginal covariance,
/// `H_ff − H_fx H_xx⁻¹ H_xf`. Zero if focal is not a parameter.
///
/// Small (ε-regularized) diagonal loading keeps the gauge directions of the
/// camera block invertible; they carry no focal information.
pub fn marginal_focal_information(system: &BlockSystem) -> f64 {
    let layout = &system.layout;
    let Some(fi) = layout.focal_index else {
        return 0.0;
    };
    let nc = layout.n_cam;
    // Schur-reduce the disparities first (exact, diagonal block).
    let mut s = system.h_cam.clone();
    let mut entries = Vec::new();
    for block in &system.coupling {
        for p in 0..layout.pixels {
            let h = system.h_disp[block.disp_offset + p];
            if !(h > 0.0) {
                continue;
            }
            block.entries(layout, p, &mut entries);
            for &(a, va) in &entries {
                for &(b, vb) in &entries {
                    s[(a, b)] -= va * vb / h;
                }
            }
        }
    }
    let others: Vec<usize> = (0..nc).filter(|&k| k != fi).collect();
    let hff = s[(fi, fi)];
    if others.is_empty() {
        return hff.max(0.0);
    }
    let scale = others
        .iter()
        .map(|&k| s[(k, k)].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut hxx = DMatrix::from_fn(others.len(), others.len(), |a, b| s[(others[a], others[b])]);
    for k in 0..others.len() {
        hxx[(k, k)] += EPSILON * scale;
    }
    let hxf = DVector::from_fn(others.len(), |a, _| s[(others[a], fi)]);
    let reduced = match hxx.cholesky() {
        Some(ch) => hff - hxf.dot(&ch.solve(&hxf)),
        None => return 0.0,
    };
    reduced.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    pub gamma_d: f64,
    pub beta_d: f64,
    pub tau_f: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            gamma_d: DEFAULT_GAMMA_D,
            beta_d: DEFAULT_BETA_D,
            tau_f: DEFAULT_TAU_F,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityReport {
    /// Per-node disparity variance rasters (`None` where disparity is fixed).
    pub disparity_sigma: Vec<Option<Raster<f64>>>,
    /// Median of diag(H_d) over all valid disparity unknowns.
    pub median_hd: f64,
    /// Hessian entry of the normalized focal.
    pub focal_h: f64,
    pub w_d_gate: f64,
    pub focal_enabled: bool,
}

/// Observability of a converged problem from its undamped reprojection
/// Hessian (the mono prior is excluded; focal is always included so its
/// information can be measured).
pub fn observability_report(problem: &BaProblem, params: &GateParams) -> ObservabilityReport {
    let mut p = problem.clone();
    p.mono_prior = None;
    p.optimize_focal = true;
    let system = assemble_system(&p);
    let layout = &system.layout;
    let mut hd = Vec::new();
    for (node, off) in layout.disp_offset.iter().enumerate() {
        if let Some(o) = off {
            let grid = &p.disparities[node];
            hd.extend(
                (0..layout.pixels)
                    .filter(|&k| grid.valid[k])
                    .map(|k| system.h_disp[o + k]),
            );
        }
    }
    let median_hd = median(&hd).unwrap_or(0.0);
    let focal_h = focal_information(&system, p.focal);
    let (w, h) = p.grid_size();
    ObservabilityReport {
        disparity_sigma: disparity_sigma_rasters(&system, w, h),
        median_hd,
        focal_h,
        w_d_gate: depth_reg_weight(median_hd, params.gamma_d, params.beta_d),
        focal_enabled: focal_gate(focal_h, params.tau_f),
    }
}

impl ObservabilityReport {
    /// Plain-text `key = value` summary (rasters are written separately).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "median_hd = {:e}", self.median_hd);
        let _ = writeln!(s, "focal_h = {:e}", self.focal_h);
        let _ = writeln!(s, "w_d_gate = {:e}", self.w_d_gate);
        let _ = writeln!(s, "focal_enabled = {}", self.focal_enabled);
        s
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::Vector3;
    use proptest::prelude::*;

    use super::*;
    use crate::ba::{normalize_disparity, rescale_translation, Edge};
    use crate::frame_graph::{build_edges, EdgeObservation};
    use crate::raster::GridLevel;
    use crate::synth::{generate, BackgroundSpec, SceneBundle, SceneSpec, TrajectoryKind};

    #[test]
    fn reg_weight_examples() {
        assert_eq!(depth_reg_weight(0.0, 1e-4, 0.05), 1e-4);
        let half = depth_reg_weight(2f64.ln() / 0.05, 1e-4, 0.05);
        assert!((half - 0.5e-4).abs() < 1e-18);
        assert!(depth_reg_weight(1e6, 1e-4, 0.05) < 1e-300);
    }

    proptest! {
        #[test]
        fn reg_weight_strictly_decreasing(a in 0.0..500.0f64, d in 1e-6..50.0f64) {
            let wa = depth_reg_weight(a, 1e-4, 0.05);
            let wb = depth_reg_weight(a + d, 1e-4, 0.05);
            prop_assert!(wb < wa);
            prop_assert!(wa > 0.0 && wa <= 1e-4);
        }
    }

    fn keyframe_problem(kind: TrajectoryKind, magnitude: f64) -> (SceneBundle, BaProblem) {
        let spec = SceneSpec {
            trajectory: kind,
            magnitude,
            n_frames: 16,
            width: 256,
            height: 192,
            focal: 200.0,
            background: BackgroundSpec {
                center: Vector3::new(0.0, 0.0, 2.0),
                base_depth: 8.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let b = generate(&spec).unwrap();
        let frames: Vec<usize> = (0..b.n_frames()).step_by(3).collect();
        let k = b.intrinsics_at(GridLevel::LowRes);
        let mut disp: Vec<_> = frames
            .iter()
            .map(|&f| b.gt_disparity(f, GridLevel::LowRes))
            .collect();
        let s = normalize_disparity(&mut disp).unwrap();
        let poses: Vec<_> = frames
            .iter()
            .map(|&f| rescale_translation(&b.poses[f], s))
            .collect();
        let edges = build_edges(&poses, &disp, &k, 3, 0.0)
            .into_iter()
            .map(|(i, j)| {
                let f = b.flow(frames[i], frames[j], GridLevel::LowRes);
                let obs = EdgeObservation::from_flow(&f.flow, f.confidence, None).unwrap();
                Edge {
                    i,
                    j,
                    obs: Arc::new(obs),
                }
            })
            .collect();
        let p = BaProblem::new(k, k.fx / k.max_dim(), poses, disp, edges);
        (b, p)
    }

    #[test]
    fn static_camera_has_maximal_variance() {
        let (_, p) = keyframe_problem(TrajectoryKind::Static, 0.0);
        let r = observability_report(&p, &GateParams::default());
        assert_eq!(r.median_hd, 0.0);
        assert!(r.focal_h < 1e-12);
        assert!(!r.focal_enabled);
        assert_eq!(r.w_d_gate, DEFAULT_GAMMA_D);
        for sigma in r.disparity_sigma.iter().flatten() {
            assert!(sigma.iter().all(|&v| v == 1.0 / EPSILON));
        }
    }

    #[test]
    fn forward_variance_peaks_at_epipole() {
        let (b, p) = keyframe_problem(TrajectoryKind::Forward, 0.1);
        let r = observability_report(&p, &GateParams::default());
        let k = b.intrinsics_at(GridLevel::LowRes);
        let mid = p.num_nodes() / 2;
        let sigma = r.disparity_sigma[mid].as_ref().unwrap();
        let (mut best, mut at) = (0.0, 0);
        for (q, &v) in sigma.iter().enumerate() {
            if v > best {
                (best, at) = (v, q);
            }
        }
        let (x, y) = ((at % k.width) as f64, (at / k.width) as f64);
        let dist = ((x - k.cx).powi(2) + (y - k.cy).powi(2)).sqrt();
        assert!(
            dist <= 2.0,
            "max at ({x}, {y}), epipole ({}, {})",
            k.cx,
            k.cy
        );
    }

    #[test]
    fn translation_observes_disparity_better_than_rotation() {
        let (_, rot) = keyframe_problem(TrajectoryKind::Rotational, 0.02);
        let (_, fwd) = keyframe_problem(TrajectoryKind::Forward, 0.1);
        let (_, lat) = keyframe_problem(TrajectoryKind::Lateral, 0.1);
        let g = GateParams::default();
        let r = observability_report(&rot, &g);
        assert!(r.median_hd < 1e-12, "{}", r.median_hd);
        let f = observability_report(&fwd, &g).median_hd;
        let l = observability_report(&lat, &g).median_hd;
        assert!(f > 1e-3 && l > 1e-3, "{f} {l}");
    }

    #[test]
    fn pure_forward_leaves_focal_unobservable() {
        let (_, fwd) = keyframe_problem(TrajectoryKind::Forward, 0.1);
        let r = observability_report(&fwd, &GateParams::default());
        assert!(r.focal_h < 1e-9, "{}", r.focal_h);
        assert!(!r.focal_enabled);
        let (_, rot) = keyframe_problem(TrajectoryKind::Rotational, 0.02);
        assert!(observability_report(&rot, &GateParams::default()).focal_enabled);
    }

    #[test]
    fn focal_gate_boundary() {
        assert!(!focal_gate(0.0, 50.0));
        assert!(focal_gate(50.0, 50.0));
        assert!(!focal_gate(49.999, 50.0));
    }
}
