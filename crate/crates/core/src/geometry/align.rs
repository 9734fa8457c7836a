use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::{GeometryError, SimTransform};

/// Closed-form least-squares similarity `dst ≈ s·R·src + t` (Umeyama 1991).
///
/// The rotation carries the determinant-sign correction so reflections are never
/// returned. Fails when fewer than three pairs are given or the source points
/// are collinear.
pub fn umeyama_sim3(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<SimTransform, GeometryError> {
    fit(src, dst, 2)
}

/// Like [`umeyama_sim3`] but accepts collinear sources. The rotation about
/// the line is then arbitrary (still a least-squares minimizer); only
/// coincident sources are rejected.
pub fn umeyama_sim3_tolerant(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<SimTransform, GeometryError> {
    fit(src, dst, 1)
}

fn fit(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    min_rank: usize,
) -> Result<SimTransform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = src.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_dst = dst.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_src;
        let dc = d - mu_dst;
        cov += dc * sc.transpose();
        scatter += sc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov *= inv_n;
    var_src *= inv_n;

    let sv = scatter.symmetric_eigenvalues();
    let mut ev = [sv[0].abs(), sv[1].abs(), sv[2].abs()];
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= f64::MIN_POSITIVE || (min_rank >= 2 && ev[1] <= 1e-12 * ev[0]) {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(GeometryError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // nalgebra sorts singular values descending; flip the smallest.
        s_diag[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = svd.singular_values.dot(&s_diag) / var_src;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_dst - rotation * mu_src * scale;
    SimTransform::new(scale, rotation, translation)
}
