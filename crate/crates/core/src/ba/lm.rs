use super::problem::{BaProblem, D_MIN};
use super::schur::{predicted_decrease, schur_solve, Step};
use super::system::{assemble_system, objective};
use super::BaError;
use crate::geometry::Twist;

/// Classic Levenberg–Marquardt damping schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingState {
    pub lambda: f64,
    pub up_factor: f64,
    pub down_factor: f64,
}

impl Default for DampingState {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            up_factor: 10.0,
            down_factor: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub damping: DampingState,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub cost_tol: f64,
    /// Costs at or below this count as converged (round-off floor).
    pub abs_cost_tol: f64,
    pub max_rejections: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            damping: DampingState::default(),
            max_iters: 30,
            cost_tol: 1e-10,
            abs_cost_tol: 1e-20,
            max_rejections: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmIteration {
    pub cost: f64,
    pub lambda: f64,
    pub rejections: usize,
    pub step_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmStatus {
    Converged,
    MaxIterations,
    /// Too many consecutive rejected steps; the best state found is returned.
    NoProgress,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step.
    pub trace: Vec<LmIteration>,
    pub status: LmStatus,
    pub final_lambda: f64,
}

impl LmReport {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Applies a Schur step: left-multiplicative pose retraction, multiplicative
/// focal update through `log f`, additive disparity update floored at `D_MIN`.
pub fn apply_step(problem: &BaProblem, step: &Step) -> BaProblem {
    let layout = super::system::ParamLayout::new(problem);
    let mut out = problem.clone();
    for (node, idx) in layout.pose_index.iter().enumerate() {
        if let Some(s) = idx {
            let delta = Twist::from_slice(&step.camera.as_slice()[*s..*s + 6]);
            out.poses[node] = problem.poses[node].retract(&delta);
        }
    }
    if let Some(f) = layout.focal_index {
        out.focal = problem.focal * step.camera[f].exp();
    }
    for (node, off) in layout.disp_offset.iter().enumerate() {
        let Some(off) = off else { continue };
        let grid = &mut out.disparities[node];
        for p in 0..layout.pixels {
            if grid.valid[p] {
                let v = grid.values[p] + step.disparity[off + p];
                grid.values[p] = v.max(D_MIN);
            }
        }
    }
    out
}

/// Runs LM to convergence. Accepted steps never increase the objective.
pub fn lm_iterate(
    problem: &BaProblem,
    options: &LmOptions,
) -> Result<(BaProblem, LmReport), BaError> {
    problem.validate()?;
    let mut state = problem.clone();
    let mut lambda = options.damping.lambda;
    let initial_cost = objective(&state);
    let mut cost = initial_cost;
    let mut trace = Vec::new();
    let mut status = LmStatus::MaxIterations;

    for _ in 0..options.max_iters {
        if cost <= options.abs_cost_tol {
            status = LmStatus::Converged;
            break;
        }
        let system = assemble_system(&state);
        if system.r_cam.iter().chain(&system.r_disp).all(|&g| g == 0.0) {
            status = LmStatus::Converged;
            break;
        }
        let mut rejections = 0;
        let accepted = loop {
            let step = match schur_solve(&system, lambda) {
                Ok(step) => step,
                Err(BaError::SingularSystem) => {
                    lambda *= options.damping.up_factor;
                    rejections += 1;
                    if rejections >= options.max_rejections {
                        break None;
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trial = apply_step(&state, &step);
            let trial_cost = objective(&trial);
            if trial_cost.is_finite() && trial_cost < cost {
                lambda = (lambda / options.damping.down_factor).max(1e-12);
                break Some((trial, trial_cost, step.norm()));
            }
            // A step that cannot improve the model meaningfully means we are at
            // the numerical minimum rather than stuck.
            if predicted_decrease(&system, &step) <= options.cost_tol * cost + options.abs_cost_tol
            {
                status = LmStatus::Converged;
                break None;
            }
            lambda *= options.damping.up_factor;
            rejections += 1;
            if rejections >= options.max_rejections {
                break None;
            }
        };
        let Some((trial, trial_cost, step_norm)) = accepted else {
            if status != LmStatus::Converged {
                status = LmStatus::NoProgress;
            }
            break;
        };
        let rel = (cost - trial_cost) / cost;
        state = trial;
        cost = trial_cost;
        trace.push(LmIteration {
            cost,
            lambda,
            rejections,
            step_norm,
        });
        if rel < options.cost_tol {
            status = LmStatus::Converged;
            break;
        }
    }

    Ok((
        state,
        LmReport {
            initial_cost,
            final_cost: cost,
            trace,
            status,
            final_lambda: lambda,
        },
    ))
}

/// Camera-only bundle adjustment; disparities are left bit-identical.
pub fn motion_only_ba(
    problem: &BaProblem,
    options: &LmOptions,
) -> Result<(BaProblem, LmReport), BaError> {
    let mut p = problem.clone();
    p.optimize_disparity = false;
    let (mut out, report) = lm_iterate(&p, options)?;
    out.optimize_disparity = problem.optimize_disparity;
    Ok((out, report))
}
