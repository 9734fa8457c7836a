//! Residuals, Jacobians and the block normal equations
//!
//! ```text
//! [ H_Gf   E  ] [Δξ] = [r_Gf]
//! [ Eᵀ    H_d ] [Δd]   [r_d ]
//! ```
//!
//! `H_d` is diagonal because each reprojection term touches exactly one
//! disparity unknown (the source pixel's).

use nalgebra::{DMatrix, DVector, Matrix2x6, SMatrix, SVector, Vector2};
use rayon::prelude::*;

use super::problem::{BaProblem, Edge, EdgeFrame, PixelJacobian};
use crate::raster::Raster;

type Mat13 = SMatrix<f64, 13, 13>;
type Vec13 = SVector<f64, 13>;

/// Camera-parameter and disparity indexing of a problem's unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    /// Start of each node's 6-wide pose block, `None` when fixed.
    pub pose_index: Vec<Option<usize>>,
    pub focal_index: Option<usize>,
    pub n_cam: usize,
    /// Start of each node's disparity block (one entry per grid pixel), `None` when fixed.
    pub disp_offset: Vec<Option<usize>>,
    pub n_disp: usize,
    pub pixels: usize,
}

impl ParamLayout {
    pub fn new(problem: &BaProblem) -> Self {
        let n = problem.num_nodes();
        let mut next = 0;
        let pose_index = (0..n)
            .map(|i| {
                if problem.fixed_poses.contains(&i) {
                    None
                } else {
                    next += 6;
                    Some(next - 6)
                }
            })
            .collect();
        let focal_index = problem.optimize_focal.then(|| {
            next += 1;
            next - 1
        });
        let (w, h) = problem.grid_size();
        let pixels = w * h;
        let mut n_disp = 0;
        let disp_offset = (0..n)
            .map(|i| {
                if problem.disparity_is_free(i) {
                    n_disp += pixels;
                    Some(n_disp - pixels)
                } else {
                    None
                }
            })
            .collect();
        Self {
            pose_index,
            focal_index,
            n_cam: next,
            disp_offset,
            n_disp,
            pixels,
        }
    }
}

/// Coupling rows `E` for the disparity unknowns of one source node.
///
/// Each pixel row holds `[pose_i (6) | focal (1) | target_0 (6) | target_1 (6) | …]`,
/// one target block per outgoing edge.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub node: usize,
    pub disp_offset: usize,
    pub targets: Vec<usize>,
    pub stride: usize,
    pub rows: Vec<f64>,
}

impl CouplingBlock {
    fn new(node: usize, disp_offset: usize, targets: Vec<usize>, pixels: usize) -> Self {
        let stride = 7 + 6 * targets.len();
        Self {
            node,
            disp_offset,
            targets,
            stride,
            rows: vec![0.0; stride * pixels],
        }
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.rows[pixel * self.stride..(pixel + 1) * self.stride]
    }

    /// `(camera index, value)` pairs of one pixel row, skipping fixed parameters.
    pub fn entries(&self, layout: &ParamLayout, pixel: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let row = self.row(pixel);
        if let Some(pi) = layout.pose_index[self.node] {
            out.extend((0..6).map(|c| (pi + c, row[c])));
        }
        if let Some(fi) = layout.focal_index {
            out.push((fi, row[6]));
        }
        for (k, &t) in self.targets.iter().enumerate() {
            if let Some(pj) = layout.pose_index[t] {
                let base = 7 + 6 * k;
                out.extend((0..6).map(|c| (pj + c, row[base + c])));
            }
        }
    }
}

/// Assembled Gauss–Newton system at the current state (undamped).
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub layout: ParamLayout,
    pub h_cam: DMatrix<f64>,
    pub r_cam: DVector<f64>,
    pub h_disp: Vec<f64>,
    pub r_disp: Vec<f64>,
    pub coupling: Vec<CouplingBlock>,
    /// Objective (reprojection plus mono prior) at the linearization point.
    pub cost: f64,
}

impl BlockSystem {
    /// Dense `(H, r̃)` of the full system, camera unknowns first. Only for small problems.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nc = self.layout.n_cam;
        let n = nc + self.layout.n_disp;
        let mut h = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        h.view_mut((0, 0), (nc, nc)).copy_from(&self.h_cam);
        r.rows_mut(0, nc).copy_from(&self.r_cam);
        for k in 0..self.layout.n_disp {
            h[(nc + k, nc + k)] = self.h_disp[k];
            r[nc + k] = self.r_disp[k];
        }
        let mut entries = Vec::new();
        for block in &self.coupling {
            for p in 0..self.layout.pixels {
                block.entries(&self.layout, p, &mut entries);
                let col = nc + block.disp_offset + p;
                for &(c, v) in &entries {
                    h[(c, col)] += v;
                    h[(col, c)] += v;
                }
            }
        }
        (h, r)
    }

    /// Diagonal of the full Hessian, camera entries first.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d: Vec<f64> = (0..self.layout.n_cam).map(|i| self.h_cam[(i, i)]).collect();
        d.extend_from_slice(&self.h_disp);
        d
    }
}

/// Per-edge residual raster `r_ij = û_ij − u_ij`; NaN where the pixel does not contribute.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeResiduals {
    pub residual: Raster<Vector2<f64>>,
    pub valid: Raster<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    pub edges: Vec<EdgeResiduals>,
    /// `Σ_(i,j) Σ_p w̃_ij(p)·‖r_ij(p)‖²`
    pub cost: f64,
}

/// Whether pixel `p` of `edge` enters the cost, and its disparity.
#[inline]
fn pixel_input(problem: &BaProblem, edge: &Edge, p: usize) -> Option<(f64, f64, Vector2<f64>)> {
    let w = edge.obs.weight[p];
    if !(w > 0.0) {
        return None;
    }
    let target = edge.obs.target[p];
    if !(target.x.is_finite() && target.y.is_finite()) {
        return None;
    }
    let d = problem.disparities[edge.i].at(p)?;
    Some((w, d, target))
}

fn edge_cost(problem: &BaProblem, edge: &Edge) -> f64 {
    let frame = EdgeFrame::new(problem, edge);
    let (w, h) = problem.grid_size();
    let mut cost = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let Some((wt, d, target)) = pixel_input(problem, edge, p) else {
                continue;
            };
            if let Some((_, pt)) = frame.point(x as f64, y as f64, d) {
                cost += wt * (target - frame.project(&pt)).norm_squared();
            }
        }
    }
    cost
}

pub fn reprojection_residuals(problem: &BaProblem) -> Residuals {
    let (w, h) = problem.grid_size();
    let mut cost = 0.0;
    let edges = problem
        .edges
        .iter()
        .map(|edge| {
            let frame = EdgeFrame::new(problem, edge);
            let mut residual = Raster::filled(w, h, Vector2::new(f64::NAN, f64::NAN));
            let mut valid = Raster::filled(w, h, false);
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let Some((wt, d, target)) = pixel_input(problem, edge, p) else {
                        continue;
                    };
                    if let Some((_, pt)) = frame.point(x as f64, y as f64, d) {
                        let r = target - frame.project(&pt);
                        cost += wt * r.norm_squared();
                        residual[p] = r;
                        valid[p] = true;
                    }
                }
            }
            EdgeResiduals { residual, valid }
        })
        .collect();
    Residuals { edges, cost }
}

/// Weighted reprojection cost alone; edges are summed in problem order.
pub fn reprojection_cost(problem: &BaProblem) -> f64 {
    let per_edge: Vec<f64> = problem
        .edges
        .par_iter()
        .map(|e| edge_cost(problem, e))
        .collect();
    per_edge.iter().sum()
}

/// Mono-prior term `w_d · Σ‖d − D^align‖²` over free disparities.
pub fn prior_cost(problem: &BaProblem) -> f64 {
    let Some(prior) = &problem.mono_prior else {
        return 0.0;
    };
    if prior.weight == 0.0 {
        return 0.0;
    }
    let mut cost = 0.0;
    for node in 0..problem.num_nodes() {
        if !problem.disparity_is_free(node) {
            continue;
        }
        let d = &problem.disparities[node];
        let a = &prior.align[node];
        for p in 0..d.values.len() {
            if let (Some(dv), Some(av)) = (d.at(p), a.at(p)) {
                cost += (dv - av) * (dv - av);
            }
        }
    }
    prior.weight * cost
}

/// Full objective minimized by LM: reprojection plus mono prior.
pub fn objective(problem: &BaProblem) -> f64 {
    reprojection_cost(problem) + prior_cost(problem)
}

/// Analytic derivatives of every contributing pixel, per edge.
pub type EdgeJacobians = Vec<Option<PixelJacobian>>;

pub fn analytic_jacobians(problem: &BaProblem) -> Vec<EdgeJacobians> {
    let (w, h) = problem.grid_size();
    problem
        .edges
        .par_iter()
        .map(|edge| {
            let frame = EdgeFrame::new(problem, edge);
            (0..w * h)
                .map(|p| {
                    let (_, d, _) = pixel_input(problem, edge, p)?;
                    let mut jac = frame.jacobian((p % w) as f64, (p / w) as f64, d)?;
                    if !problem.optimize_focal {
                        jac.d_log_focal = Vector2::zeros();
                    }
                    Some(jac)
                })
                .collect()
        })
        .collect()
}

struct GroupPartial {
    h_cam: DMatrix<f64>,
    r_cam: DVector<f64>,
    h_disp: Vec<f64>,
    r_disp: Vec<f64>,
    coupling: Option<CouplingBlock>,
    cost: f64,
}

/// Scatters a local `[pose_i | pose_j | focal]` block into the camera system.
fn scatter(
    layout: &ParamLayout,
    i: usize,
    j: usize,
    hl: &Mat13,
    gl: &Vec13,
    h_cam: &mut DMatrix<f64>,
    r_cam: &mut DVector<f64>,
) {
    let blocks: [(Option<usize>, usize, usize); 3] = [
        (layout.pose_index[i], 0, 6),
        (layout.pose_index[j], 6, 6),
        (layout.focal_index, 12, 1),
    ];
    for &(ga, la, wa) in &blocks {
        let Some(ga) = ga else { continue };
        for a in 0..wa {
            r_cam[ga + a] += gl[la + a];
        }
        for &(gb, lb, wb) in &blocks {
            let Some(gb) = gb else { continue };
            for a in 0..wa {
                for b in 0..wb {
                    h_cam[(ga + a, gb + b)] += hl[(la + a, lb + b)];
                }
            }
        }
    }
}

/// Accumulates all edges leaving `node`. `pixel` yields the Jacobian and residual of
/// a contributing pixel of edge `k` (index into `problem.edges`).
fn accumulate_group<F>(
    problem: &BaProblem,
    layout: &ParamLayout,
    node: usize,
    edge_ids: &[usize],
    pixel: &F,
) -> GroupPartial
where
    F: Fn(usize, usize) -> Option<(f64, PixelJacobian, Vector2<f64>)> + Sync,
{
    let nc = layout.n_cam;
    let np = layout.pixels;
    let mut out = GroupPartial {
        h_cam: DMatrix::zeros(nc, nc),
        r_cam: DVector::zeros(nc),
        h_disp: Vec::new(),
        r_disp: Vec::new(),
        coupling: None,
        cost: 0.0,
    };
    let free_disp = layout.disp_offset[node];
    if let Some(offset) = free_disp {
        out.h_disp = vec![0.0; np];
        out.r_disp = vec![0.0; np];
        let targets = edge_ids.iter().map(|&k| problem.edges[k].j).collect();
        out.coupling = Some(CouplingBlock::new(node, offset, targets, np));
    }
    let use_focal = layout.focal_index.is_some();
    for (slot, &k) in edge_ids.iter().enumerate() {
        let edge = &problem.edges[k];
        let mut hl = Mat13::zeros();
        let mut gl = Vec13::zeros();
        for p in 0..np {
            let Some((w, jac, r)) = pixel(k, p) else {
                continue;
            };
            out.cost += w * r.norm_squared();
            let mut jrow = SMatrix::<f64, 2, 13>::zeros();
            jrow.fixed_view_mut::<2, 6>(0, 0).copy_from(&jac.d_pose_i);
            jrow.fixed_view_mut::<2, 6>(0, 6).copy_from(&jac.d_pose_j);
            if use_focal {
                jrow.set_column(12, &jac.d_log_focal);
            }
            let jt_w = jrow.transpose() * w;
            hl += jt_w * jrow;
            gl += jt_w * r;
            if let Some(block) = out.coupling.as_mut() {
                let jd = jac.d_disparity;
                out.h_disp[p] += w * jd.norm_squared();
                out.r_disp[p] += w * jd.dot(&r);
                let e = jt_w * jd;
                let stride = block.stride;
                let row = &mut block.rows[p * stride..(p + 1) * stride];
                for c in 0..6 {
                    row[c] += e[c];
                    row[7 + 6 * slot + c] += e[6 + c];
                }
                row[6] += e[12];
            }
        }
        scatter(
            layout,
            node,
            edge.j,
            &hl,
            &gl,
            &mut out.h_cam,
            &mut out.r_cam,
        );
    }
    out
}

fn assemble_with<F>(problem: &BaProblem, pixel: F) -> BlockSystem
where
    F: Fn(usize, usize) -> Option<(f64, PixelJacobian, Vector2<f64>)> + Sync,
{
    let layout = ParamLayout::new(problem);
    let n = problem.num_nodes();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, e) in problem.edges.iter().enumerate() {
        groups[e.i].push(k);
    }
    let partials: Vec<GroupPartial> = (0..n)
        .into_par_iter()
        .map(|node| accumulate_group(problem, &layout, node, &groups[node], &pixel))
        .collect();

    let mut h_cam = DMatrix::zeros(layout.n_cam, layout.n_cam);
    let mut r_cam = DVector::zeros(layout.n_cam);
    let mut h_disp = Vec::with_capacity(layout.n_disp);
    let mut r_disp = Vec::with_capacity(layout.n_disp);
    let mut coupling = Vec::new();
    let mut cost = 0.0;
    for part in partials {
        h_cam += &part.h_cam;
        r_cam += &part.r_cam;
        h_disp.extend_from_slice(&part.h_disp);
        r_disp.extend_from_slice(&part.r_disp);
        coupling.extend(part.coupling);
        cost += part.cost;
    }

    if let Some(prior) = &problem.mono_prior {
        if prior.weight > 0.0 {
            let mut prior_sum = 0.0;
            for node in 0..n {
                let Some(offset) = layout.disp_offset[node] else {
                    continue;
                };
                let d = &problem.disparities[node];
                let a = &prior.align[node];
                for p in 0..layout.pixels {
                    if let (Some(dv), Some(av)) = (d.at(p), a.at(p)) {
                        h_disp[offset + p] += prior.weight;
                        r_disp[offset + p] += prior.weight * (av - dv);
                        prior_sum += (dv - av) * (dv - av);
                    }
                }
            }
            cost += prior.weight * prior_sum;
        }
    }

    BlockSystem {
        layout,
        h_cam,
        r_cam,
        h_disp,
        r_disp,
        coupling,
        cost,
    }
}

/// Builds `H = JᵀWJ`, `r̃ = JᵀWr` from the current state in one pass.
pub fn assemble_system(problem: &BaProblem) -> BlockSystem {
    let (w, _) = problem.grid_size();
    let frames: Vec<EdgeFrame> = problem
        .edges
        .iter()
        .map(|e| EdgeFrame::new(problem, e))
        .collect();
    assemble_with(problem, |k, p| {
        let edge = &problem.edges[k];
        let (wt, d, target) = pixel_input(problem, edge, p)?;
        let jac = frames[k].jacobian((p % w) as f64, (p / w) as f64, d)?;
        Some((wt, jac, target - jac.uv))
    })
}

/// Builds the block system from precomputed Jacobians and residuals.
pub fn build_normal_equations(
    problem: &BaProblem,
    jacobians: &[EdgeJacobians],
    residuals: &Residuals,
) -> BlockSystem {
    assemble_with(problem, |k, p| {
        let jac = jacobians[k][p]?;
        let er = &residuals.edges[k];
        if !er.valid[p] {
            return None;
        }
        Some((problem.edges[k].obs.weight[p], jac, er.residual[p]))
    })
}

/// Stacks the analytic Jacobian of one pixel into dense rows over all unknowns
/// (camera first, then disparities). Test helper for small problems.
pub fn dense_pixel_rows(
    layout: &ParamLayout,
    edge: &Edge,
    pixel: usize,
    jac: &PixelJacobian,
) -> DMatrix<f64> {
    let n = layout.n_cam + layout.n_disp;
    let mut rows = DMatrix::zeros(2, n);
    let put = |rows: &mut DMatrix<f64>, start: Option<usize>, block: &Matrix2x6<f64>| {
        if let Some(s) = start {
            rows.view_mut((0, s), (2, 6)).copy_from(block);
        }
    };
    put(&mut rows, layout.pose_index[edge.i], &jac.d_pose_i);
    put(&mut rows, layout.pose_index[edge.j], &jac.d_pose_j);
    if let Some(f) = layout.focal_index {
        rows.set_column(f, &jac.d_log_focal);
    }
    if let Some(off) = layout.disp_offset[edge.i] {
        rows.set_column(layout.n_cam + off + pixel, &jac.d_disparity);
    }
    rows
}
