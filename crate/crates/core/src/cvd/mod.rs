//! Consistent video depth: first-order refinement of full-resolution
//! disparity and per-pixel uncertainty against fixed cameras.

mod losses;

pub use losses::{
    flow_loss, normal_map, prior_grad_loss, prior_normal_loss, prior_si_loss, ratio_delta,
    temp_loss, FrameLoss, PairLoss, PairObservation, KINK_TOL,
};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::ba::D_MIN;
use crate::geometry::{relative_pose, Intrinsics, RigidTransform};
use crate::pipeline::{MonoAlignment, ObservationSource, PipelineError};
use crate::raster::{percentile, DisparityGrid, GridLevel, Raster};

pub const DEFAULT_PAIR_OFFSETS: [usize; 5] = [1, 2, 4, 8, 15];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CvdError {
    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: usize, trace: Vec<TraceEntry> },
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvdConfig {
    pub w_flow: f64,
    pub w_temp: f64,
    pub w_prior: f64,
    pub w_grad: f64,
    pub w_normal: f64,
    pub beta_grad: f64,
    pub grad_scales: usize,
    pub pair_offsets: Vec<usize>,
    pub warmup_steps: usize,
    pub main_steps: usize,
    /// Adam step for `log M̂`, per-frame scale and shift.
    pub lr_uncertainty: f64,
    pub lr_affine: f64,
    /// Adam step for `log D̂`.
    pub lr_disparity: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub m_floor: f64,
    pub m_ceil: f64,
    /// Initialize `M̂` from motion maps; otherwise `M̂ ≡ 1`.
    pub use_motion_maps: bool,
}

impl Default for CvdConfig {
    fn default() -> Self {
        Self {
            w_flow: 1.0,
            w_temp: 0.2,
            w_prior: 1.0,
            w_grad: 1.0,
            w_normal: 4.0,
            beta_grad: 5.0,
            grad_scales: 4,
            pair_offsets: DEFAULT_PAIR_OFFSETS.to_vec(),
            warmup_steps: 100,
            main_steps: 400,
            lr_uncertainty: 1e-2,
            lr_affine: 1e-2,
            lr_disparity: 5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            m_floor: 1e-3,
            m_ceil: 1e3,
            use_motion_maps: true,
        }
    }
}

impl CvdConfig {
    pub fn validate(&self) -> Result<(), CvdError> {
        let weights = [
            self.w_flow,
            self.w_temp,
            self.w_prior,
            self.w_grad,
            self.w_normal,
            self.beta_grad,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(CvdError::Inconsistent(
                "loss weights must be finite and ≥ 0".into(),
            ));
        }
        if !(self.m_floor > 0.0 && self.m_floor < self.m_ceil) {
            return Err(CvdError::Inconsistent("need 0 < m_floor < m_ceil".into()));
        }
        if self.pair_offsets.contains(&0) {
            return Err(CvdError::Inconsistent(
                "pair offsets must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All `(i, i + k)` with `k` in `offsets` and `i + k < n_frames`, grouped by offset.
pub fn select_pairs(n_frames: usize, offsets: &[usize]) -> Vec<(usize, usize)> {
    offsets
        .iter()
        .flat_map(|&k| (0..n_frames.saturating_sub(k)).map(move |i| (i, i + k)))
        .collect()
}

/// Fixed inputs: cameras, aligned mono disparity and observed flows.
#[derive(Clone, Debug, PartialEq)]
pub struct CvdData {
    /// Full-resolution intrinsics.
    pub intrinsics: Intrinsics,
    pub poses: Vec<RigidTransform>,
    pub align: Vec<DisparityGrid>,
    pub align_normals: Vec<Vec<Option<Vector3<f64>>>>,
    /// Static probability per pixel, 1 = static.
    pub motion: Vec<Raster<f64>>,
    pub pairs: Vec<PairObservation>,
    relative: Vec<RigidTransform>,
}

impl CvdData {
    pub fn new(
        intrinsics: Intrinsics,
        poses: Vec<RigidTransform>,
        align: Vec<DisparityGrid>,
        motion: Vec<Raster<f64>>,
        pairs: Vec<PairObservation>,
    ) -> Result<Self, CvdError> {
        let n = poses.len();
        let (w, h) = (intrinsics.width, intrinsics.height);
        if align.len() != n || motion.len() != n {
            return Err(CvdError::Inconsistent(
                "per-frame inputs disagree on frame count".into(),
            ));
        }
        if align.iter().any(|d| d.width() != w || d.height() != h)
            || motion.iter().any(|m| m.width() != w || m.height() != h)
        {
            return Err(CvdError::Inconsistent(
                "per-frame raster size differs from intrinsics".into(),
            ));
        }
        for p in &pairs {
            if p.i >= n || p.j >= n || p.i == p.j {
                return Err(CvdError::Inconsistent(format!(
                    "pair ({}, {}) out of range",
                    p.i, p.j
                )));
            }
            if p.flow.width() != w || p.flow.height() != h {
                return Err(CvdError::Inconsistent(format!(
                    "flow ({}, {}) has the wrong size",
                    p.i, p.j
                )));
            }
        }
        let align_normals = align.iter().map(|a| normal_map(a, &intrinsics)).collect();
        let relative = pairs
            .iter()
            .map(|p| relative_pose(&poses[p.i], &poses[p.j]))
            .collect();
        Ok(Self {
            intrinsics,
            poses,
            align,
            align_normals,
            motion,
            pairs,
            relative,
        })
    }

    /// Loads both directions of every offset pair the source provides at
    /// full resolution. `D_align` is the aligned relative prior.
    pub fn from_source(
        source: &dyn ObservationSource,
        intrinsics: Intrinsics,
        poses: Vec<RigidTransform>,
        alignment: &MonoAlignment,
        offsets: &[usize],
    ) -> Result<Self, CvdError> {
        let n = source.n_frames();
        let level = GridLevel::FullRes;
        let align = (0..n)
            .map(|f| {
                Ok(DisparityGrid::from_values(
                    alignment.apply(&source.disp_rel(f, level)?),
                    level,
                ))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let motion = (0..n)
            .map(|f| source.motion(f, level))
            .collect::<Result<Vec<_>, _>>()?;
        let directed: Vec<(usize, usize)> = select_pairs(n, offsets)
            .into_iter()
            .flat_map(|(i, j)| [(i, j), (j, i)])
            .filter(|&(i, j)| source.has_pair(i, j, level))
            .collect();
        let pairs = directed
            .par_iter()
            .map(|&(i, j)| {
                let (flow, conf) = source.flow(i, j, level)?;
                Ok(PairObservation::new(i, j, flow, &conf))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Self::new(intrinsics, poses, align, motion, pairs)
    }

    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    /// Half the 98th percentile of the aligned disparity; the warm-up shift
    /// is stepped in multiples of it.
    pub fn disparity_unit(&self) -> f64 {
        let values: Vec<f64> = self
            .align
            .iter()
            .flat_map(|a| (0..a.values.len()).filter_map(|p| a.at(p)))
            .collect();
        percentile(&values, 98.0)
            .filter(|&v| v > 0.0)
            .map_or(1.0, |v| 0.5 * v)
    }
}

/// Optimization variables. `M̂` is the per-pixel uncertainty scale
/// (large on unreliable pixels); scale and shift are used in warm-up only.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthState {
    pub disparity: Vec<DisparityGrid>,
    pub uncertainty: Vec<Raster<f64>>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl DepthState {
    /// `D̂ = D_align`, unit scale, zero shift and
    /// `M̂ = 1 / (m_floor + m·(1 − m_floor))` for static probability `m`.
    pub fn initial(data: &CvdData, config: &CvdConfig) -> Self {
        let uncertainty = data
            .motion
            .iter()
            .map(|m| {
                if config.use_motion_maps {
                    m.map(|&s| {
                        let s = if s.is_finite() {
                            s.clamp(0.0, 1.0)
                        } else {
                            1.0
                        };
                        1.0 / (config.m_floor + s * (1.0 - config.m_floor))
                    })
                } else {
                    Raster::filled(m.width(), m.height(), 1.0)
                }
            })
            .collect();
        let n = data.n_frames();
        Self {
            disparity: data.align.clone(),
            uncertainty,
            scale: vec![1.0; n],
            shift: vec![0.0; n],
        }
    }

    /// `max(scale·D̂ + shift, D_MIN)` on valid pixels.
    pub fn effective_disparity(&self) -> Vec<DisparityGrid> {
        self.disparity
            .iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(d, (&a, &b))| DisparityGrid {
                values: d.values.map(|&v| (a * v + b).max(D_MIN)),
                valid: d.valid.clone(),
                level: d.level,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub flow: f64,
    pub temp: f64,
    pub si: f64,
    pub grad: f64,
    pub normal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub value: f64,
    /// Unweighted sums of each term over pairs or frames.
    pub terms: LossTerms,
    pub grad_d: Vec<Vec<f64>>,
    pub grad_m: Vec<Vec<f64>>,
}

fn add(acc: &mut [f64], g: &[f64], w: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += w * b;
    }
}

/// `w_flow·C_flow + w_temp·C_temp + w_prior·(C_si + w_grad·C_grad + w_normal·C_normal)`
/// with gradients w.r.t. every disparity and uncertainty pixel. Terms with
/// zero weight are skipped.
pub fn total_objective(
    disparity: &[DisparityGrid],
    uncertainty: &[Raster<f64>],
    config: &CvdConfig,
    data: &CvdData,
) -> Objective {
    let k = &data.intrinsics;
    let npx = k.width * k.height;
    let pair_losses: Vec<(Option<PairLoss>, Option<PairLoss>)> = data
        .pairs
        .par_iter()
        .zip(data.relative.par_iter())
        .map(|(obs, g)| {
            let (di, dj, mi) = (&disparity[obs.i], &disparity[obs.j], &uncertainty[obs.i]);
            let f = (config.w_flow > 0.0).then(|| flow_loss(g, k, di, mi, obs));
            let t = (config.w_temp > 0.0).then(|| temp_loss(g, k, di, dj, mi, obs));
            (f, t)
        })
        .collect();
    let prior_losses: Vec<[Option<FrameLoss>; 3]> = if config.w_prior > 0.0 {
        (0..disparity.len())
            .into_par_iter()
            .map(|f| {
                let (d, a) = (&disparity[f], &data.align[f]);
                [
                    Some(prior_si_loss(d, a)),
                    (config.w_grad > 0.0)
                        .then(|| prior_grad_loss(d, a, config.grad_scales, config.beta_grad)),
                    (config.w_normal > 0.0)
                        .then(|| prior_normal_loss(d, &data.align_normals[f], k)),
                ]
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut terms = LossTerms::default();
    let mut grad_d = vec![vec![0.0; npx]; disparity.len()];
    let mut grad_m = vec![vec![0.0; npx]; disparity.len()];
    for (obs, (f, t)) in data.pairs.iter().zip(&pair_losses) {
        for (loss, w, slot) in [
            (f, config.w_flow, &mut terms.flow),
            (t, config.w_temp, &mut terms.temp),
        ] {
            let Some(l) = loss else { continue };
            *slot += l.value;
            add(&mut grad_d[obs.i], &l.grad_d_i, w);
            add(&mut grad_d[obs.j], &l.grad_d_j, w);
            add(&mut grad_m[obs.i], &l.grad_m_i, w);
        }
    }
    let sub = [1.0, config.w_grad, config.w_normal];
    for (f, losses) in prior_losses.iter().enumerate() {
        for (idx, loss) in losses.iter().enumerate() {
            let Some(l) = loss else { continue };
            match idx {
                0 => terms.si += l.value,
                1 => terms.grad += l.value,
                _ => terms.normal += l.value,
            }
            add(&mut grad_d[f], &l.grad_d, config.w_prior * sub[idx]);
        }
    }
    let value = config.w_flow * terms.flow
        + config.w_temp * terms.temp
        + config.w_prior * (terms.si + config.w_grad * terms.grad + config.w_normal * terms.normal);
    Objective {
        value,
        terms,
        grad_d,
        grad_m,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Main,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub phase: Phase,
    pub total: f64,
    pub terms: LossTerms,
}

impl TraceEntry {
    pub const CSV_HEADER: &'static str = "step,phase,total,flow,temp,si,grad,normal";

    pub fn to_csv(&self) -> String {
        let phase = match self.phase {
            Phase::Warmup => "warmup",
            Phase::Main => "main",
        };
        let t = &self.terms;
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.step, phase, self.total, t.flow, t.temp, t.si, t.grad, t.normal
        )
    }
}

/// Adam moments for one parameter block.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, c: &CvdConfig) {
        self.t += 1;
        let b1 = 1.0 - c.adam_beta1.powi(self.t);
        let b2 = 1.0 - c.adam_beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = c.adam_beta1 * *m + (1.0 - c.adam_beta1) * g;
            *v = c.adam_beta2 * *v + (1.0 - c.adam_beta2) * g * g;
            *p -= lr * (*m / b1) / ((*v / b2).sqrt() + c.adam_eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvdResult {
    pub state: DepthState,
    pub trace: Vec<TraceEntry>,
}

fn evaluate(
    disparity: &[DisparityGrid],
    state: &DepthState,
    config: &CvdConfig,
    data: &CvdData,
    step: usize,
    phase: Phase,
    trace: &mut Vec<TraceEntry>,
) -> Result<Objective, CvdError> {
    let obj = total_objective(disparity, &state.uncertainty, config, data);
    trace.push(TraceEntry {
        step,
        phase,
        total: obj.value,
        terms: obj.terms,
    });
    if !obj.value.is_finite() {
        return Err(CvdError::NonFiniteLoss {
            step,
            trace: trace.clone(),
        });
    }
    Ok(obj)
}

/// Steps `log M̂` and clamps `M̂` to `[m_floor, m_ceil]`.
fn step_uncertainty(
    state: &mut DepthState,
    obj: &Objective,
    adam: &mut [Adam],
    config: &CvdConfig,
) {
    let (lo, hi) = (config.m_floor.ln(), config.m_ceil.ln());
    for ((m, g), a) in state
        .uncertainty
        .iter_mut()
        .zip(&obj.grad_m)
        .zip(adam.iter_mut())
    {
        let mut logm: Vec<f64> = m.iter().map(|v| v.ln()).collect();
        let g: Vec<f64> = g.iter().zip(m.iter()).map(|(g, v)| g * v).collect();
        let before = logm.clone();
        a.step(&mut logm, &g, config.lr_uncertainty, config);
        for ((v, l), l0) in m.as_mut_slice().iter_mut().zip(logm).zip(before) {
            if l != l0 {
                *v = l.clamp(lo, hi).exp();
            }
        }
    }
}

/// Warm-up over per-frame scale/shift and `M̂` with `D̂` frozen, then
/// scale/shift are folded into `D̂` and `D̂`, `M̂` are optimized jointly.
/// The trace holds the objective before every step.
pub fn optimize(
    initial: DepthState,
    config: &CvdConfig,
    data: &CvdData,
) -> Result<CvdResult, CvdError> {
    config.validate()?;
    let n = data.n_frames();
    if initial.disparity.len() != n
        || initial.uncertainty.len() != n
        || initial.scale.len() != n
        || initial.shift.len() != n
    {
        return Err(CvdError::Inconsistent(
            "state and data disagree on frame count".into(),
        ));
    }
    let npx = data.intrinsics.width * data.intrinsics.height;
    let mut state = initial;
    let mut trace = Vec::with_capacity(config.warmup_steps + config.main_steps);
    let mut adam_m: Vec<Adam> = (0..n).map(|_| Adam::new(npx)).collect();

    let mut adam_affine = Adam::new(2 * n);
    let unit = data.disparity_unit();
    for step in 0..config.warmup_steps {
        let eff = state.effective_disparity();
        let obj = evaluate(&eff, &state, config, data, step, Phase::Warmup, &mut trace)?;
        let mut params: Vec<f64> = state
            .scale
            .iter()
            .copied()
            .chain(state.shift.iter().map(|b| b / unit))
            .collect();
        let before = params.clone();
        let mut grads = vec![0.0; 2 * n];
        for f in 0..n {
            let d = &state.disparity[f];
            for (p, g) in obj.grad_d[f].iter().enumerate() {
                if d.valid[p] && eff[f].values[p] > D_MIN {
                    grads[f] += g * d.values[p];
                    grads[n + f] += g * unit;
                }
            }
        }
        adam_affine.step(&mut params, &grads, config.lr_affine, config);
        state.scale.copy_from_slice(&params[..n]);
        for (f, b) in state.shift.iter_mut().enumerate() {
            if params[n + f] != before[n + f] {
                *b = params[n + f] * unit;
            }
        }
        step_uncertainty(&mut state, &obj, &mut adam_m, config);
    }
    state.disparity = state.effective_disparity();
    state.scale.fill(1.0);
    state.shift.fill(0.0);

    let mut adam_d: Vec<Adam> = (0..n).map(|_| Adam::new(npx)).collect();
    for step in 0..config.main_steps {
        let obj = evaluate(
            &state.disparity,
            &state,
            config,
            data,
            config.warmup_steps + step,
            Phase::Main,
            &mut trace,
        )?;
        for ((d, g), a) in state
            .disparity
            .iter_mut()
            .zip(&obj.grad_d)
            .zip(adam_d.iter_mut())
        {
            let before: Vec<f64> = d
                .values
                .iter()
                .map(|v| if v > &0.0 { v.ln() } else { 0.0 })
                .collect();
            let mut logd = before.clone();
            let g: Vec<f64> = g.iter().zip(d.values.iter()).map(|(g, v)| g * v).collect();
            a.step(&mut logd, &g, config.lr_disparity, config);
            for (p, (l, l0)) in logd.into_iter().zip(before).enumerate() {
                if d.valid[p] && l != l0 {
                    d.values[p] = l.exp().max(D_MIN);
                }
            }
        }
        step_uncertainty(&mut state, &obj, &mut adam_m, config);
    }
    Ok(CvdResult { state, trace })
}

#[cfg(test)]
mod tests;
