use super::PipelineError;
use crate::ba::D_MIN;
use crate::raster::{median, Raster};

/// Global affine map from relative to metric mono disparity.
#[derive(Clone, Debug, PartialEq)]
pub struct MonoAlignment {
    pub alpha: f64,
    pub beta: f64,
    /// Per-frame scale estimates whose median is `alpha`.
    pub frame_alpha: Vec<f64>,
}

impl MonoAlignment {
    /// `max(α·D_rel + β, D_MIN)`; non-finite inputs stay NaN.
    pub fn apply(&self, rel: &Raster<f64>) -> Raster<f64> {
        rel.map(|&r| {
            if r.is_finite() {
                (self.alpha * r + self.beta).max(D_MIN)
            } else {
                f64::NAN
            }
        })
    }
}

fn mad(values: &[f64]) -> f64 {
    let m = median(values).unwrap_or(0.0);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev).unwrap_or(0.0)
}

/// Per-frame scale is the ratio of median absolute deviations of the metric
/// and relative disparities; the global scale is their median and the shift
/// the median residual `D_abs − α·D_rel` over all frames.
pub fn align_mono_depth(
    rel: &[Raster<f64>],
    abs: &[Raster<f64>],
) -> Result<(MonoAlignment, Vec<Raster<f64>>), PipelineError> {
    if rel.len() != abs.len() || rel.is_empty() {
        return Err(PipelineError::Inconsistent(format!(
            "{} relative vs {} metric priors",
            rel.len(),
            abs.len()
        )));
    }
    let mut frame_alpha = Vec::with_capacity(rel.len());
    let mut pairs: Vec<Vec<(f64, f64)>> = Vec::with_capacity(rel.len());
    for (f, (r, a)) in rel.iter().zip(abs).enumerate() {
        if !r.same_shape(a) {
            return Err(PipelineError::Inconsistent(format!(
                "frame {f}: prior shapes differ"
            )));
        }
        let p: Vec<(f64, f64)> = r
            .iter()
            .zip(a.iter())
            .filter(|(r, a)| r.is_finite() && a.is_finite())
            .map(|(&r, &a)| (r, a))
            .collect();
        let mr = mad(&p.iter().map(|x| x.0).collect::<Vec<_>>());
        if !(mr > 0.0) {
            return Err(PipelineError::DegenerateScale(f));
        }
        frame_alpha.push(mad(&p.iter().map(|x| x.1).collect::<Vec<_>>()) / mr);
        pairs.push(p);
    }
    let alpha = median(&frame_alpha).unwrap_or(1.0);
    let residuals: Vec<f64> = pairs.iter().flatten().map(|(r, a)| a - alpha * r).collect();
    let beta = median(&residuals).unwrap_or(0.0);
    let m = MonoAlignment {
        alpha,
        beta,
        frame_alpha,
    };
    let aligned = rel.iter().map(|r| m.apply(r)).collect();
    Ok((m, aligned))
}
