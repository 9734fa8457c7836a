use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::system::BlockSystem;
use super::BaError;

/// Added to every diagonal entry before scaling by λ, so parameters with zero
/// curvature (unobserved focal, empty disparity pixels) still get damped.
pub const DAMPING_FLOOR: f64 = 1e-9;

#[inline]
pub fn damped(h: f64, lambda: f64) -> f64 {
    h + lambda * (h + DAMPING_FLOOR)
}

/// Solution of the damped system.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub camera: DVector<f64>,
    pub disparity: Vec<f64>,
}

impl Step {
    pub fn norm(&self) -> f64 {
        (self.camera.norm_squared() + self.disparity.iter().map(|d| d * d).sum::<f64>()).sqrt()
    }
}

/// Solves `(H + λ·diag(H)) Δ = r̃` by eliminating the diagonal disparity block:
///
/// ```text
/// Δξ = (H_Gf − E H_d⁻¹ Eᵀ)⁻¹ (r_Gf − E H_d⁻¹ r_d)
/// Δd = H_d⁻¹ (r_d − Eᵀ Δξ)
/// ```
///
/// with the reduced camera system factored by Cholesky.
pub fn schur_solve(system: &BlockSystem, lambda: f64) -> Result<Step, BaError> {
    let layout = &system.layout;
    let nc = layout.n_cam;
    let hd: Vec<f64> = system.h_disp.iter().map(|&h| damped(h, lambda)).collect();

    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = system
        .coupling
        .par_iter()
        .map(|block| {
            let mut s = DMatrix::zeros(nc, nc);
            let mut rhs = DVector::zeros(nc);
            let mut entries = Vec::with_capacity(block.stride);
            for p in 0..layout.pixels {
                let k = block.disp_offset + p;
                if !(hd[k] > 0.0) {
                    continue;
                }
                block.entries(layout, p, &mut entries);
                let inv = 1.0 / hd[k];
                let rd = system.r_disp[k] * inv;
                for &(a, va) in &entries {
                    if va == 0.0 {
                        continue;
                    }
                    rhs[a] -= va * rd;
                    let sa = va * inv;
                    for &(b, vb) in &entries {
                        s[(a, b)] -= sa * vb;
                    }
                }
            }
            (s, rhs)
        })
        .collect();

    let mut s = system.h_cam.clone();
    for i in 0..nc {
        s[(i, i)] = damped(system.h_cam[(i, i)], lambda);
    }
    let mut rhs = system.r_cam.clone();
    for (ps, pr) in partials {
        s += ps;
        rhs += pr;
    }

    let camera = if nc == 0 {
        DVector::zeros(0)
    } else {
        let chol = s.cholesky().ok_or(BaError::SingularSystem)?;
        chol.solve(&rhs)
    };
    if camera.iter().any(|v| !v.is_finite()) {
        return Err(BaError::SingularSystem);
    }

    let mut disparity: Vec<f64> = (0..layout.n_disp)
        .map(|k| {
            if hd[k] > 0.0 {
                system.r_disp[k] / hd[k]
            } else {
                0.0
            }
        })
        .collect();
    let mut entries = Vec::new();
    for block in &system.coupling {
        for p in 0..layout.pixels {
            let k = block.disp_offset + p;
            if !(hd[k] > 0.0) {
                continue;
            }
            block.entries(layout, p, &mut entries);
            let et_dx: f64 = entries.iter().map(|&(a, v)| v * camera[a]).sum();
            disparity[k] -= et_dx / hd[k];
        }
    }
    Ok(Step { camera, disparity })
}

/// Model decrease `2Δᵀr̃ − ΔᵀHΔ` of the undamped quadratic for a step.
pub fn predicted_decrease(system: &BlockSystem, step: &Step) -> f64 {
    let layout = &system.layout;
    let dc = &step.camera;
    let mut quad = (dc.transpose() * &system.h_cam * dc)[(0, 0)];
    let mut lin = dc.dot(&system.r_cam);
    for k in 0..layout.n_disp {
        let dd = step.disparity[k];
        quad += system.h_disp[k] * dd * dd;
        lin += system.r_disp[k] * dd;
    }
    let mut entries = Vec::new();
    for block in &system.coupling {
        for p in 0..layout.pixels {
            let dd = step.disparity[block.disp_offset + p];
            if dd == 0.0 {
                continue;
            }
            block.entries(layout, p, &mut entries);
            let e_dc: f64 = entries.iter().map(|&(a, v)| v * dc[a]).sum();
            quad += 2.0 * e_dc * dd;
        }
    }
    2.0 * lin - quad
}
