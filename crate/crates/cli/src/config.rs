use std::fmt::Write as _;
use std::path::Path;

use camdepth::cvd::CvdConfig;
use camdepth::io::{parse_key_values, IoError};
use camdepth::pipeline::PipelineConfig;
use camdepth::uncertainty::GateParams;

use crate::CliError;

/// Settings shared by `solve` and `cvd`, read from `key = value` text.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub cvd: CvdConfig,
}

fn offsets_text(v: &[usize]) -> String {
    v.iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(path, &text)
    }

    /// Keys not given keep their defaults; unknown keys are an error.
    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        for (line, key, value) in parse_key_values(path, text)? {
            let bad = |what: &str| {
                CliError::Config(format!("{}:{line}: `{key}` expects {what}", path.display()))
            };
            let num = || value.parse::<f64>().map_err(|_| bad("a number"));
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| bad("a non-negative integer"))
            };
            let flag = || value.parse::<bool>().map_err(|_| bad("true or false"));
            let p = &mut c.pipeline;
            let d = &mut c.cvd;
            match key.as_str() {
                "n_init" => p.n_init = int()?,
                "window" => p.window = int()?,
                "w_d_frontend" => p.w_d_frontend = num()?,
                "gamma_d" => p.gate.gamma_d = num()?,
                "beta_d" => p.gate.beta_d = num()?,
                "tau_f" => p.gate.tau_f = num()?,
                "uncertainty_gating" => p.uncertainty_gating = flag()?,
                "keyframe_threshold_px" => p.keyframe_threshold_px = num()?,
                "edge_radius" => p.edge_radius = int()?,
                "proximity_px" => p.proximity_px = num()?,
                "focal_perturbation" => p.focal_perturbation = num()?,
                "frontend_iters" => p.frontend_iters = int()?,
                "backend_iters" => p.backend_iters = int()?,
                "register_iters" => p.register_iters = int()?,
                "use_motion_maps" => {
                    p.use_motion_maps = flag()?;
                    d.use_motion_maps = p.use_motion_maps;
                }
                "w_flow" => d.w_flow = num()?,
                "w_temp" => d.w_temp = num()?,
                "w_prior" => d.w_prior = num()?,
                "w_grad" => d.w_grad = num()?,
                "w_normal" => d.w_normal = num()?,
                "beta_grad" => d.beta_grad = num()?,
                "grad_scales" => d.grad_scales = int()?,
                "pair_offsets" => {
                    d.pair_offsets = value
                        .split(',')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("comma-separated integers"))?;
                }
                "warmup_steps" => d.warmup_steps = int()?,
                "main_steps" => d.main_steps = int()?,
                "lr_disparity" => d.lr_disparity = num()?,
                "lr_uncertainty" => d.lr_uncertainty = num()?,
                "lr_affine" => d.lr_affine = num()?,
                "m_floor" => d.m_floor = num()?,
                "m_ceil" => d.m_ceil = num()?,
                _ => {
                    return Err(CliError::Config(format!(
                        "{}:{line}: unknown key `{key}`",
                        path.display()
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.pipeline;
        let GateParams {
            gamma_d,
            beta_d,
            tau_f,
        } = p.gate;
        let positive = [
            ("gamma_d", gamma_d),
            ("beta_d", beta_d),
            ("tau_f", tau_f),
            ("focal_perturbation", p.focal_perturbation),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(CliError::Config(format!("`{k}` must be positive")));
        }
        if !(p.w_d_frontend >= 0.0) || !(p.keyframe_threshold_px >= 0.0) || !(p.proximity_px >= 0.0)
        {
            return Err(CliError::Config(
                "weights and thresholds must be non-negative".into(),
            ));
        }
        if p.n_init < 2 || p.window < 2 {
            return Err(CliError::Config(
                "`n_init` and `window` must be at least 2".into(),
            ));
        }
        self.cvd
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Every key with its resolved value, in `parse` order.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let d = &self.cvd;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_init", p.n_init.to_string());
        kv("window", p.window.to_string());
        kv("w_d_frontend", p.w_d_frontend.to_string());
        kv("gamma_d", p.gate.gamma_d.to_string());
        kv("beta_d", p.gate.beta_d.to_string());
        kv("tau_f", p.gate.tau_f.to_string());
        kv("uncertainty_gating", p.uncertainty_gating.to_string());
        kv("keyframe_threshold_px", p.keyframe_threshold_px.to_string());
        kv("edge_radius", p.edge_radius.to_string());
        kv("proximity_px", p.proximity_px.to_string());
        kv("focal_perturbation", p.focal_perturbation.to_string());
        kv("frontend_iters", p.frontend_iters.to_string());
        kv("backend_iters", p.backend_iters.to_string());
        kv("register_iters", p.register_iters.to_string());
        kv("use_motion_maps", p.use_motion_maps.to_string());
        kv("w_flow", d.w_flow.to_string());
        kv("w_temp", d.w_temp.to_string());
        kv("w_prior", d.w_prior.to_string());
        kv("w_grad", d.w_grad.to_string());
        kv("w_normal", d.w_normal.to_string());
        kv("beta_grad", d.beta_grad.to_string());
        kv("grad_scales", d.grad_scales.to_string());
        kv("pair_offsets", offsets_text(&d.pair_offsets));
        kv("warmup_steps", d.warmup_steps.to_string());
        kv("main_steps", d.main_steps.to_string());
        kv("lr_disparity", d.lr_disparity.to_string());
        kv("lr_uncertainty", d.lr_uncertainty.to_string());
        kv("lr_affine", d.lr_affine.to_string());
        kv("m_floor", d.m_floor.to_string());
        kv("m_ceil", d.m_ceil.to_string());
        s
    }
}
