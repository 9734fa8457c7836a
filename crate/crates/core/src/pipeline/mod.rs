//! Two-phase camera and disparity solve: mono-depth alignment,
//! initialization, sliding-window frontend, gated global backend and
//! non-keyframe registration.

mod align;
mod source;

pub use align::{align_mono_depth, MonoAlignment};
pub use source::ObservationSource;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::ba::{
    lm_iterate, motion_only_ba, normalize_disparity, BaError, BaProblem, Edge, LmOptions, LmReport,
    LmStatus, MonoPrior,
};
use crate::frame_graph::{
    build_edges, EdgeObservation, FrameGraph, GraphError, MotionMap, DEFAULT_KEYFRAME_THRESHOLD_PX,
    DEFAULT_PROXIMITY_PX, DEFAULT_WINDOW_RADIUS,
};
use crate::geometry::{relative_pose, se3_exp, Intrinsics, RigidTransform};
use crate::io::IoError;
use crate::raster::{DisparityGrid, GridLevel};
use crate::uncertainty::{
    depth_reg_weight, focal_gate, observability_report, GateParams, ObservabilityReport,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("only {found} of {required} initial keyframes show enough motion")]
    InsufficientMotion { found: usize, required: usize },
    #[error("relative prior of frame {0} has no spread")]
    DegenerateScale(usize),
    #[error("frame {0} has no neighboring keyframe")]
    NoNeighborKeyframe(usize),
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Ba(#[from] BaError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub n_init: usize,
    /// Number of active keyframes in the sliding window.
    pub window: usize,
    pub w_d_frontend: f64,
    pub gate: GateParams,
    /// When off, the backend uses no mono prior and always optimizes focal.
    pub uncertainty_gating: bool,
    pub keyframe_threshold_px: f64,
    pub edge_radius: usize,
    pub proximity_px: f64,
    pub use_motion_maps: bool,
    /// Multiplies the metadata focal before solving.
    pub focal_perturbation: f64,
    pub frontend_iters: usize,
    pub backend_iters: usize,
    pub register_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_init: 8,
            window: 8,
            w_d_frontend: 0.05,
            gate: GateParams::default(),
            uncertainty_gating: true,
            keyframe_threshold_px: DEFAULT_KEYFRAME_THRESHOLD_PX,
            edge_radius: DEFAULT_WINDOW_RADIUS,
            proximity_px: DEFAULT_PROXIMITY_PX,
            use_motion_maps: true,
            focal_perturbation: 1.0,
            frontend_iters: 10,
            backend_iters: 30,
            register_iters: 20,
        }
    }
}

/// One BA run, for the run log.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: String,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

/// Solver state. Disparities and translations are held in normalized units
/// (disparity divided by `disparity_scale`'s inverse so its 98th percentile
/// is 2); `metric_*` accessors undo this.
#[derive(Clone, Debug)]
pub struct VideoSolveState {
    pub config: PipelineConfig,
    /// Low-res grid geometry.
    pub intrinsics: Intrinsics,
    /// Shared normalized focal (`f_px / max(width, height)`).
    pub focal: f64,
    pub poses: Vec<Option<RigidTransform>>,
    /// Keyframe frame indices in order.
    pub keyframes: Vec<usize>,
    pub disparities: BTreeMap<usize, DisparityGrid>,
    /// Aligned mono disparity of every frame, normalized units.
    pub align: Vec<DisparityGrid>,
    pub alignment: MonoAlignment,
    /// Normalized disparity = `disparity_scale` × metric disparity.
    pub disparity_scale: f64,
    pub graph: FrameGraph,
    pub report: Option<ObservabilityReport>,
    /// Gated prior weight and focal flag used by the backend.
    pub w_d: f64,
    pub focal_enabled: bool,
    pub tracking_lost: bool,
    no_progress_streak: usize,
    /// Frames consumed so far.
    pub processed: usize,
    pub log: Vec<StageRecord>,
}

impl VideoSolveState {
    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn is_keyframe(&self, frame: usize) -> bool {
        self.keyframes.binary_search(&frame).is_ok()
    }

    /// Keyframes currently inside the sliding window.
    pub fn active_keyframes(&self) -> &[usize] {
        let n = self.keyframes.len();
        &self.keyframes[n.saturating_sub(self.config.window)..]
    }

    pub fn focal_px(&self) -> f64 {
        self.focal * self.intrinsics.max_dim()
    }

    /// Poses with translations in the metric units of the mono prior.
    pub fn metric_poses(&self) -> Vec<Option<RigidTransform>> {
        self.poses
            .iter()
            .map(|p| {
                p.map(|p| RigidTransform::new(p.rotation, p.translation * self.disparity_scale))
            })
            .collect()
    }

    pub fn metric_disparity(&self, frame: usize) -> Option<DisparityGrid> {
        self.disparities
            .get(&frame)
            .map(|d| d.scaled(1.0 / self.disparity_scale))
    }

    fn record(&mut self, stage: &str, report: &LmReport) {
        self.log.push(StageRecord {
            stage: stage.to_string(),
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
            iterations: report.iterations(),
            status: report.status,
        });
    }

    /// Cached observation for `i → j`; `None` if the source lacks the pair.
    fn observation(
        &mut self,
        source: &dyn ObservationSource,
        i: usize,
        j: usize,
    ) -> Result<Option<Arc<EdgeObservation>>, PipelineError> {
        if let Some(obs) = self.graph.edge(i, j) {
            return Ok(Some(obs.clone()));
        }
        if !source.has_pair(i, j, GridLevel::LowRes) {
            return Ok(None);
        }
        let (flow, conf) = source.flow(i, j, GridLevel::LowRes)?;
        let motion = if self.config.use_motion_maps {
            Some(MotionMap(source.motion(i, GridLevel::LowRes)?))
        } else {
            None
        };
        let obs = Arc::new(EdgeObservation::from_flow(&flow, conf, motion.as_ref())?);
        for n in [i, j] {
            if !self.graph.nodes().any(|node| node.frame == n) {
                self.graph.add_node(n, self.is_keyframe(n));
            }
        }
        self.graph.add_edge(i, j, obs.clone())?;
        Ok(Some(obs))
    }

    fn lm_options(iters: usize) -> LmOptions {
        LmOptions {
            max_iters: iters,
            ..Default::default()
        }
    }

    /// A problem over `nodes` (frame indices) with the given directed frame pairs.
    fn problem(
        &mut self,
        source: &dyn ObservationSource,
        nodes: &[usize],
        pairs: &[(usize, usize)],
    ) -> Result<BaProblem, PipelineError> {
        let index: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(k, &f)| (f, k)).collect();
        let poses = nodes
            .iter()
            .map(|&f| self.poses[f].unwrap_or_else(RigidTransform::identity))
            .collect();
        let disparities = nodes
            .iter()
            .map(|&f| self.disparities.get(&f).unwrap_or(&self.align[f]).clone())
            .collect();
        let mut edges = Vec::new();
        for &(a, b) in pairs {
            if let Some(obs) = self.observation(source, a, b)? {
                edges.push(Edge {
                    i: index[&a],
                    j: index[&b],
                    obs,
                });
            }
        }
        let mut p = BaProblem::new(self.intrinsics, self.focal, poses, disparities, edges);
        p.fixed_disparities = nodes
            .iter()
            .enumerate()
            .filter(|(_, f)| !self.disparities.contains_key(f))
            .map(|(k, _)| k)
            .collect();
        p.mono_prior = Some(MonoPrior {
            align: nodes.iter().map(|&f| self.align[f].clone()).collect(),
            weight: 0.0,
        });
        Ok(p)
    }

    /// Frame pairs among `nodes` from the temporal window and proximity rules.
    fn graph_pairs(&self, nodes: &[usize]) -> Vec<(usize, usize)> {
        let poses: Vec<_> = nodes
            .iter()
            .map(|&f| self.poses[f].unwrap_or_else(RigidTransform::identity))
            .collect();
        let disps: Vec<_> = nodes
            .iter()
            .map(|&f| self.disparities.get(&f).unwrap_or(&self.align[f]).clone())
            .collect();
        build_edges(
            &poses,
            &disps,
            &self.intrinsics,
            self.config.edge_radius,
            self.config.proximity_px,
        )
        .into_iter()
        .map(|(a, b)| (nodes[a], nodes[b]))
        .collect()
    }

    fn store(&mut self, nodes: &[usize], solved: &BaProblem) {
        for (k, &f) in nodes.iter().enumerate() {
            self.poses[f] = Some(solved.poses[k]);
            if self.disparities.contains_key(&f) {
                self.disparities.insert(f, solved.disparities[k].clone());
            }
        }
        self.focal = solved.focal;
    }
}

/// Mean observed low-res flow from `from` to `to`, or `None` if the pair is unavailable.
fn observed_motion(
    state: &mut VideoSolveState,
    source: &dyn ObservationSource,
    from: usize,
    to: usize,
) -> Result<Option<f64>, PipelineError> {
    Ok(state
        .observation(source, from, to)?
        .map(|o| o.mean_observed_flow().unwrap_or(0.0)))
}

/// Whether `frame` shows enough motion relative to the last keyframe. Frames
/// beyond the stored pair range always qualify.
fn is_new_keyframe(
    state: &mut VideoSolveState,
    source: &dyn ObservationSource,
    frame: usize,
) -> Result<bool, PipelineError> {
    let last = *state
        .keyframes
        .last()
        .expect("frame 0 is always a keyframe");
    Ok(match observed_motion(state, source, last, frame)? {
        Some(d) => d >= state.config.keyframe_threshold_px,
        None => true,
    })
}

/// Aligns mono priors, selects the first `n_init` keyframes and solves
/// their poses by motion-only BA with disparities fixed to the aligned prior.
pub fn initialize(
    source: &dyn ObservationSource,
    config: &PipelineConfig,
) -> Result<VideoSolveState, PipelineError> {
    let n = source.n_frames();
    if n < 2 || config.n_init < 2 {
        return Err(PipelineError::InsufficientMotion {
            found: n.min(1),
            required: config.n_init,
        });
    }
    let rel = (0..n)
        .map(|f| source.disp_rel(f, GridLevel::LowRes))
        .collect::<Result<Vec<_>, _>>()?;
    let abs = (0..n)
        .map(|f| source.disp_abs(f, GridLevel::LowRes))
        .collect::<Result<Vec<_>, _>>()?;
    let (alignment, aligned) = align_mono_depth(&rel, &abs)?;
    let mut align: Vec<DisparityGrid> = aligned
        .into_iter()
        .map(|r| DisparityGrid::from_values(r, GridLevel::LowRes))
        .collect();
    let disparity_scale =
        normalize_disparity(&mut align).map_err(|e| PipelineError::Inconsistent(e.to_string()))?;

    let full = source.intrinsics();
    let intrinsics = source.intrinsics_at(GridLevel::LowRes);
    let focal = full.fx * config.focal_perturbation / full.max_dim();
    let mut state = VideoSolveState {
        config: config.clone(),
        intrinsics,
        focal,
        poses: vec![None; n],
        keyframes: vec![0],
        disparities: BTreeMap::new(),
        align,
        alignment,
        disparity_scale,
        graph: FrameGraph::new(),
        report: None,
        w_d: config.w_d_frontend,
        focal_enabled: false,
        tracking_lost: false,
        no_progress_streak: 0,
        processed: 1,
        log: Vec::new(),
    };
    state.graph.add_node(0, true);
    let mut frame = 1;
    while state.keyframes.len() < config.n_init && frame < n {
        if is_new_keyframe(&mut state, source, frame)? {
            state.keyframes.push(frame);
            state.graph.add_node(frame, true);
        } else {
            state.graph.add_node(frame, false);
        }
        frame += 1;
    }
    state.processed = frame;
    if state.keyframes.len() < config.n_init {
        return Err(PipelineError::InsufficientMotion {
            found: state.keyframes.len(),
            required: config.n_init,
        });
    }
    let nodes = state.keyframes.clone();
    for &f in &nodes {
        state.poses[f] = Some(RigidTransform::identity());
    }
    let pairs = state.graph_pairs(&nodes);
    let problem = state.problem(source, &nodes, &pairs)?;
    let (solved, report) =
        motion_only_ba(&problem, &VideoSolveState::lm_options(config.backend_iters))?;
    state.record("init", &report);
    state.store(&nodes, &solved);
    for &f in &nodes {
        state.disparities.insert(f, state.align[f].clone());
    }
    Ok(state)
}

/// Processes the next frame: frames with enough motion become keyframes and
/// trigger a local BA over the sliding window; others are only registered in
/// the frame graph.
pub fn frontend_track(
    state: &mut VideoSolveState,
    source: &dyn ObservationSource,
    frame: usize,
) -> Result<(), PipelineError> {
    state.processed = state.processed.max(frame + 1);
    if state.is_keyframe(frame) {
        return Ok(());
    }
    if !is_new_keyframe(state, source, frame)? {
        state.graph.add_node(frame, false);
        return Ok(());
    }
    let kf = &state.keyframes;
    let last = kf[kf.len() - 1];
    let prev = kf[kf.len() - 2];
    let (g_last, g_prev) = (state.poses[last].unwrap(), state.poses[prev].unwrap());
    let pose = extrapolate(&g_prev, prev, &g_last, last, frame);
    state.keyframes.push(frame);
    state.graph.add_node(frame, true);
    state.poses[frame] = Some(pose);
    state.disparities.insert(frame, state.align[frame].clone());

    let active = state.active_keyframes().to_vec();
    let first_active = state.keyframes.len() - active.len();
    let context: Vec<usize> = state.keyframes
        [first_active.saturating_sub(state.config.edge_radius)..first_active]
        .to_vec();
    let nodes: Vec<usize> = context.iter().chain(&active).copied().collect();
    let pairs: Vec<(usize, usize)> = state
        .graph_pairs(&nodes)
        .into_iter()
        .filter(|(a, b)| active.contains(a) || active.contains(b))
        .collect();
    let mut problem = state.problem(source, &nodes, &pairs)?;
    problem.fixed_poses = (0..context.len().max(1)).collect();
    problem.fixed_disparities.extend(0..context.len());
    if let Some(prior) = problem.mono_prior.as_mut() {
        prior.weight = state.config.w_d_frontend;
    }
    let (solved, report) = lm_iterate(
        &problem,
        &VideoSolveState::lm_options(state.config.frontend_iters),
    )?;
    state.record("frontend", &report);
    state.store(&nodes, &solved);
    if report.status == LmStatus::NoProgress {
        state.no_progress_streak += 1;
        if state.no_progress_streak >= 2 {
            state.tracking_lost = true;
        }
    } else {
        state.no_progress_streak = 0;
    }
    Ok(())
}

/// `exp(τ · log(G_b ∘ G_a⁻¹)) ∘ G_a` with `τ = (t − a) / (b − a)`.
fn extrapolate(
    g_a: &RigidTransform,
    a: usize,
    g_b: &RigidTransform,
    b: usize,
    t: usize,
) -> RigidTransform {
    let tau = (t as f64 - a as f64) / (b as f64 - a as f64);
    match relative_pose(g_a, g_b).log() {
        Ok(xi) => se3_exp(&xi.scale(tau)).compose(g_a),
        Err(_) => *g_b,
    }
}

/// Observability report, gating, global keyframe BA, non-keyframe
/// registration and a final BA over all frames. The gate is decided once,
/// after frontend tracking, and reused on later calls.
pub fn backend_global(
    state: &mut VideoSolveState,
    source: &dyn ObservationSource,
) -> Result<(), PipelineError> {
    let nodes = state.keyframes.clone();
    let pairs = state.graph_pairs(&nodes);
    let mut problem = state.problem(source, &nodes, &pairs)?;
    if state.report.is_none() {
        let report = observability_report(&problem, &state.config.gate);
        if state.config.uncertainty_gating {
            state.w_d = depth_reg_weight(
                report.median_hd,
                state.config.gate.gamma_d,
                state.config.gate.beta_d,
            );
            state.focal_enabled = focal_gate(report.focal_h, state.config.gate.tau_f);
        } else {
            state.w_d = 0.0;
            state.focal_enabled = true;
        }
        state.report = Some(report);
    }
    if let Some(prior) = problem.mono_prior.as_mut() {
        prior.weight = state.w_d;
    }
    problem.optimize_focal = state.focal_enabled;
    let (solved, report) = lm_iterate(
        &problem,
        &VideoSolveState::lm_options(state.config.backend_iters),
    )?;
    state.record("global", &report);
    state.store(&nodes, &solved);

    register_nonkeyframes(state, source)?;

    let all: Vec<usize> = (0..state.n_frames()).collect();
    let mut pairs = pairs;
    for t in all.iter().copied().filter(|&t| !state.is_keyframe(t)) {
        for k in nearest_keyframes(&state.keyframes, t)? {
            pairs.push((k, t));
        }
    }
    let mut problem = state.problem(source, &all, &pairs)?;
    if let Some(prior) = problem.mono_prior.as_mut() {
        prior.weight = state.w_d;
    }
    problem.optimize_focal = state.focal_enabled;
    let (solved, report) = lm_iterate(
        &problem,
        &VideoSolveState::lm_options(state.config.backend_iters),
    )?;
    state.record("final", &report);
    state.store(&all, &solved);
    Ok(())
}

/// The keyframes bracketing `frame`, or the two nearest on one side at the ends.
fn nearest_keyframes(keyframes: &[usize], frame: usize) -> Result<Vec<usize>, PipelineError> {
    if keyframes.len() < 2 {
        return Err(PipelineError::NoNeighborKeyframe(frame));
    }
    let next = keyframes.partition_point(|&k| k < frame);
    let start = next.clamp(1, keyframes.len() - 1) - 1;
    Ok(keyframes[start..start + 2].to_vec())
}

/// Initializes every non-keyframe pose by tangent-space interpolation between
/// its two nearest keyframes, then refines it by motion-only BA against them.
pub fn register_nonkeyframes(
    state: &mut VideoSolveState,
    source: &dyn ObservationSource,
) -> Result<(), PipelineError> {
    let targets: Vec<usize> = (0..state.n_frames())
        .filter(|&t| !state.is_keyframe(t))
        .collect();
    let mut jobs = Vec::with_capacity(targets.len());
    for &t in &targets {
        let [a, b] = nearest_keyframes(&state.keyframes, t)?[..] else {
            unreachable!()
        };
        let (ga, gb) = (state.poses[a].unwrap(), state.poses[b].unwrap());
        state.graph.add_node(t, false);
        state.poses[t] = Some(extrapolate(&ga, a, &gb, b, t));
        let mut problem = state.problem(source, &[a, b, t], &[(a, t), (b, t)])?;
        problem.fixed_poses = [0, 1].into();
        problem.mono_prior = None;
        jobs.push((t, problem));
    }
    let iters = state.config.register_iters;
    let solved: Vec<(usize, Result<(BaProblem, LmReport), BaError>)> = jobs
        .into_par_iter()
        .map(|(t, p)| {
            if p.edges.is_empty() {
                return (t, Ok((p, empty_report())));
            }
            (t, motion_only_ba(&p, &VideoSolveState::lm_options(iters)))
        })
        .collect();
    for (t, r) in solved {
        let (p, report) = r?;
        state.poses[t] = Some(p.poses[2]);
        state.record("register", &report);
    }
    Ok(())
}

fn empty_report() -> LmReport {
    LmReport {
        initial_cost: 0.0,
        final_cost: 0.0,
        trace: Vec::new(),
        status: LmStatus::Converged,
        final_lambda: 0.0,
    }
}

/// Full solve: initialization, frontend over all frames, backend.
pub fn solve_video(
    source: &dyn ObservationSource,
    config: &PipelineConfig,
) -> Result<VideoSolveState, PipelineError> {
    let mut state = initialize(source, config)?;
    for frame in state.processed..source.n_frames() {
        frontend_track(&mut state, source, frame)?;
    }
    backend_global(&mut state, source)?;
    Ok(state)
}
