use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geometry::{Intrinsics, RigidTransform};
use crate::raster::{DisparityGrid, Raster};

/// Residuals this close to an L1 or ratio kink, or to the exact minimum of
/// a prior term, get gradient 0.
pub const KINK_TOL: f64 = 1e-9;

/// A directed frame pair with its observed flow.
#[derive(Clone, Debug, PartialEq)]
pub struct PairObservation {
    pub i: usize,
    pub j: usize,
    /// Displacement `i → j` in full-res pixels.
    pub flow: Raster<Vector2<f64>>,
    /// Finite flow with positive confidence.
    pub mask: Raster<bool>,
}

impl PairObservation {
    pub fn new(i: usize, j: usize, flow: Raster<Vector2<f64>>, confidence: &Raster<f64>) -> Self {
        let mask = Raster::from_vec(
            flow.width(),
            flow.height(),
            flow.iter()
                .zip(confidence.iter())
                .map(|(f, &c)| f.x.is_finite() && f.y.is_finite() && c > 0.0)
                .collect(),
        );
        Self { i, j, flow, mask }
    }
}

/// Loss value with gradients w.r.t. the disparities of both frames and the
/// uncertainty of the source frame. Unused gradients are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_d_i: Vec<f64>,
    pub grad_d_j: Vec<f64>,
    pub grad_m_i: Vec<f64>,
}

/// Loss value with the gradient w.r.t. one frame's disparity.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLoss {
    pub value: f64,
    pub grad_d: Vec<f64>,
}

#[inline]
fn sign(r: f64) -> f64 {
    if r.abs() <= KINK_TOL {
        0.0
    } else {
        r.signum()
    }
}

/// `δ(a, b) = max(a/b, b/a)`.
pub fn ratio_delta(a: f64, b: f64) -> f64 {
    (a / b).max(b / a)
}

/// Laplacian flow reprojection loss. Per pixel
/// `‖u_ij(p) − p − flow(p)‖₁ / M̂ + log M̂`, summed and divided by the pixel count.
/// `M̂` is the uncertainty scale.
pub fn flow_loss(
    g_ij: &RigidTransform,
    k: &Intrinsics,
    d_i: &DisparityGrid,
    m_i: &Raster<f64>,
    obs: &PairObservation,
) -> PairLoss {
    let (w, h) = (d_i.width(), d_i.height());
    let n = w * h;
    let r = g_ij.rotation_matrix();
    let t = g_ij.translation;
    let mut value = 0.0;
    let mut grad_d = vec![0.0; n];
    let mut grad_m = vec![0.0; n];
    for p in 0..n {
        let Some(d) = d_i.at(p) else { continue };
        if !obs.mask[p] {
            continue;
        }
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        let q = r * k.ray(x, y) + t * d;
        if q.z <= 0.0 {
            continue;
        }
        let u = Vector2::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
        let res = u - Vector2::new(x, y) - obs.flow[p];
        let l1 = res.x.abs() + res.y.abs();
        let m = m_i[p];
        value += l1 / m + m.ln();
        let du = Vector2::new(
            k.fx * (t.x * q.z - q.x * t.z) / (q.z * q.z),
            k.fy * (t.y * q.z - q.y * t.z) / (q.z * q.z),
        );
        grad_d[p] = (sign(res.x) * du.x + sign(res.y) * du.y) / m;
        grad_m[p] = (1.0 - l1 / m) / m;
    }
    let s = 1.0 / n as f64;
    grad_d
        .iter_mut()
        .chain(grad_m.iter_mut())
        .for_each(|g| *g *= s);
    PairLoss {
        value: value * s,
        grad_d_i: grad_d,
        grad_d_j: Vec::new(),
        grad_m_i: grad_m,
    }
}

/// Bilinear taps `(index, weight)` at `q`, or `None` outside the grid or on
/// an invalid neighbor.
fn bilinear_taps(d: &DisparityGrid, q: Vector2<f64>) -> Option<[(usize, f64); 4]> {
    let (w, h) = (d.width(), d.height());
    if !(q.x >= 0.0 && q.y >= 0.0 && q.x <= (w - 1) as f64 && q.y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (q.x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (q.y.floor() as usize).min(h.saturating_sub(2));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (q.x - x0 as f64, q.y - y0 as f64);
    let taps = [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ];
    taps.iter().all(|&(i, _)| d.valid[i]).then_some(taps)
}

/// Temporal depth-consistency loss. Per pixel `δ(P_z, Ẑ_j) / M̂ + log M̂`,
/// where `P_z` is the depth of `p` moved into frame j and `Ẑ_j` is the depth
/// of the bilinearly sampled disparity of frame j at `p + flow(p)`.
pub fn temp_loss(
    g_ij: &RigidTransform,
    k: &Intrinsics,
    d_i: &DisparityGrid,
    d_j: &DisparityGrid,
    m_i: &Raster<f64>,
    obs: &PairObservation,
) -> PairLoss {
    let (w, h) = (d_i.width(), d_i.height());
    let n = w * h;
    let r = g_ij.rotation_matrix();
    let t = g_ij.translation;
    let mut value = 0.0;
    let mut grad_di = vec![0.0; n];
    let mut grad_dj = vec![0.0; n];
    let mut grad_m = vec![0.0; n];
    for p in 0..n {
        let Some(di) = d_i.at(p) else { continue };
        if !obs.mask[p] {
            continue;
        }
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        let rz = (r * k.ray(x, y)).z;
        let pz = rz / di + t.z;
        if pz <= 0.0 {
            continue;
        }
        let Some(taps) = bilinear_taps(d_j, Vector2::new(x, y) + obs.flow[p]) else {
            continue;
        };
        let s: f64 = taps.iter().map(|&(i, wt)| wt * d_j.values[i]).sum();
        if s <= 0.0 {
            continue;
        }
        // δ(P_z, 1/s) = max(ρ, 1/ρ) with ρ = P_z·s
        let rho = pz * s;
        let delta = rho.max(1.0 / rho);
        let m = m_i[p];
        value += delta / m + m.ln();
        let dd_drho = if (rho - 1.0).abs() <= KINK_TOL {
            0.0
        } else if rho > 1.0 {
            1.0
        } else {
            -1.0 / (rho * rho)
        };
        let g = dd_drho / m;
        grad_di[p] += g * s * (-rz / (di * di));
        for &(i, wt) in &taps {
            grad_dj[i] += g * pz * wt;
        }
        grad_m[p] = (1.0 - delta / m) / m;
    }
    let sc = 1.0 / n as f64;
    for g in grad_di
        .iter_mut()
        .chain(grad_dj.iter_mut())
        .chain(grad_m.iter_mut())
    {
        *g *= sc;
    }
    PairLoss {
        value: value * sc,
        grad_d_i: grad_di,
        grad_d_j: grad_dj,
        grad_m_i: grad_m,
    }
}

/// `R = log D̂ − log D_align` where both are valid, NaN elsewhere.
fn log_ratio(d: &DisparityGrid, align: &DisparityGrid) -> Vec<f64> {
    (0..d.values.len())
        .map(|p| match (d.at(p), align.at(p)) {
            (Some(a), Some(b)) => a.ln() - b.ln(),
            _ => f64::NAN,
        })
        .collect()
}

/// Scale-invariant log-disparity loss `(1/n)ΣR² − (1/n²)(ΣR)²`.
pub fn prior_si_loss(d: &DisparityGrid, align: &DisparityGrid) -> FrameLoss {
    let r = log_ratio(d, align);
    let valid: Vec<usize> = (0..r.len()).filter(|&p| r[p].is_finite()).collect();
    let mut grad_d = vec![0.0; r.len()];
    if valid.is_empty() {
        return FrameLoss { value: 0.0, grad_d };
    }
    let n = valid.len() as f64;
    let mean = valid.iter().map(|&p| r[p]).sum::<f64>() / n;
    let value = valid.iter().map(|&p| (r[p] - mean).powi(2)).sum::<f64>() / n;
    for &p in &valid {
        if (r[p] - mean).abs() > KINK_TOL {
            grad_d[p] = 2.0 * (r[p] - mean) / n / d.values[p];
        }
    }
    FrameLoss { value, grad_d }
}

/// Pyramid level: values with NaN holes and, per coarse pixel, its fine children.
struct Level {
    w: usize,
    h: usize,
    r: Vec<f64>,
    children: Vec<Vec<usize>>,
}

fn pool(fine: &Level) -> Level {
    let (w, h) = (fine.w / 2, fine.h / 2);
    let mut r = vec![f64::NAN; w * h];
    let mut children = vec![Vec::new(); w * h];
    for y in 0..h {
        for x in 0..w {
            let c: Vec<usize> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .map(|&(dx, dy)| (2 * y + dy) * fine.w + 2 * x + dx)
                .filter(|&i| fine.r[i].is_finite())
                .collect();
            if !c.is_empty() {
                r[y * w + x] = c.iter().map(|&i| fine.r[i]).sum::<f64>() / c.len() as f64;
            }
            children[y * w + x] = c;
        }
    }
    Level { w, h, r, children }
}

/// Multi-scale gated gradient matching on `R`. At each of `scales` levels
/// (2× average pooling), every pixel with valid right and lower neighbors
/// contributes `g·a` with `a = |∇ₓR| + |∇ᵧR|` and gate `g = 1 − exp(−β·a)`;
/// the per-level means are summed.
pub fn prior_grad_loss(
    d: &DisparityGrid,
    align: &DisparityGrid,
    scales: usize,
    beta: f64,
) -> FrameLoss {
    let mut levels = vec![Level {
        w: d.width(),
        h: d.height(),
        r: log_ratio(d, align),
        children: Vec::new(),
    }];
    while levels.len() < scales {
        let last = levels.last().unwrap();
        if last.w < 4 || last.h < 4 {
            break;
        }
        levels.push(pool(last));
    }
    let mut value = 0.0;
    let mut grads: Vec<Vec<f64>> = levels.iter().map(|l| vec![0.0; l.r.len()]).collect();
    for (l, g) in levels.iter().zip(grads.iter_mut()) {
        let mut terms = Vec::new();
        for y in 0..l.h.saturating_sub(1) {
            for x in 0..l.w.saturating_sub(1) {
                let (c, right, down) = (y * l.w + x, y * l.w + x + 1, (y + 1) * l.w + x);
                if !(l.r[c].is_finite() && l.r[right].is_finite() && l.r[down].is_finite()) {
                    continue;
                }
                terms.push((c, right, down, l.r[right] - l.r[c], l.r[down] - l.r[c]));
            }
        }
        if terms.is_empty() {
            continue;
        }
        let inv = 1.0 / terms.len() as f64;
        for (c, right, down, gx, gy) in terms {
            let a = gx.abs() + gy.abs();
            let e = (-beta * a).exp();
            value += (1.0 - e) * a * inv;
            let da = (1.0 - e + beta * a * e) * inv;
            let (sx, sy) = (da * sign(gx), da * sign(gy));
            g[right] += sx;
            g[down] += sy;
            g[c] -= sx + sy;
        }
    }
    // Back through the pooling, coarse to fine.
    for s in (1..levels.len()).rev() {
        let (fine, coarse) = grads.split_at_mut(s);
        let fine = fine.last_mut().unwrap();
        for (gc, children) in coarse[0].iter().zip(&levels[s].children) {
            for &c in children {
                fine[c] += gc / children.len() as f64;
            }
        }
    }
    let mut grad_d = std::mem::take(&mut grads[0]);
    for (p, g) in grad_d.iter_mut().enumerate() {
        if levels[0].r[p].is_finite() {
            *g /= d.values[p];
        } else {
            *g = 0.0;
        }
    }
    FrameLoss { value, grad_d }
}

/// Backprojected point map `K⁻¹p̃ / D`.
fn points(d: &DisparityGrid, k: &Intrinsics) -> Vec<Option<Vector3<f64>>> {
    let w = d.width();
    (0..d.values.len())
        .map(|p| d.at(p).map(|v| k.ray((p % w) as f64, (p / w) as f64) / v))
        .collect()
}

/// Unnormalized normal `t_x × t_y` from central-difference tangents, with
/// the tangents themselves.
fn raw_normal(
    pts: &[Option<Vector3<f64>>],
    w: usize,
    p: usize,
) -> Option<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let tx = pts[p + 1]? - pts[p - 1]?;
    let ty = pts[p + w]? - pts[p - w]?;
    pts[p]?;
    Some((tx.cross(&ty), tx, ty))
}

/// Unit normals on interior pixels with a valid 3×3 cross.
pub fn normal_map(d: &DisparityGrid, k: &Intrinsics) -> Vec<Option<Vector3<f64>>> {
    let (w, h) = (d.width(), d.height());
    let pts = points(d, k);
    (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
                return None;
            }
            let (n, _, _) = raw_normal(&pts, w, p)?;
            let len = n.norm();
            (len > 1e-300).then(|| n / len)
        })
        .collect()
}

/// Surface-normal loss: mean over pixels with both normals defined of
/// `1 − N̂·N_align`.
pub fn prior_normal_loss(
    d: &DisparityGrid,
    align_normals: &[Option<Vector3<f64>>],
    k: &Intrinsics,
) -> FrameLoss {
    let (w, h) = (d.width(), d.height());
    let pts = points(d, k);
    let mut grad_pts = vec![Vector3::zeros(); w * h];
    let mut value = 0.0;
    let mut count = 0usize;
    let mut terms = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = y * w + x;
            let Some(na) = align_normals[p] else { continue };
            let Some((n, tx, ty)) = raw_normal(&pts, w, p) else {
                continue;
            };
            let len = n.norm();
            if len <= 1e-300 {
                continue;
            }
            let unit = n / len;
            value += 1.0 - unit.dot(&na);
            count += 1;
            if (unit - na).norm() <= KINK_TOL {
                continue;
            }
            // ∂(−N·N_a)/∂n = −(I − N Nᵀ) N_a / ‖n‖
            let g = -(Matrix3::identity() - unit * unit.transpose()) * na / len;
            terms.push((p, ty.cross(&g), g.cross(&tx)));
        }
    }
    let mut grad_d = vec![0.0; w * h];
    if count == 0 {
        return FrameLoss { value: 0.0, grad_d };
    }
    let inv = 1.0 / count as f64;
    for (p, gtx, gty) in terms {
        grad_pts[p + 1] += gtx;
        grad_pts[p - 1] -= gtx;
        grad_pts[p + w] += gty;
        grad_pts[p - w] -= gty;
    }
    for (p, g) in grad_d.iter_mut().enumerate() {
        if let (Some(x), Some(v)) = (pts[p], d.at(p)) {
            // X = ray / D, ∂X/∂D = −X / D
            *g = -grad_pts[p].dot(&x) / v * inv;
        }
    }
    FrameLoss {
        value: value * inv,
        grad_d,
    }
}
