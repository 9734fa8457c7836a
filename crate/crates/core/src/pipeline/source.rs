use nalgebra::Vector2;

use super::PipelineError;
use crate::geometry::Intrinsics;
use crate::io::Dataset;
use crate::raster::{GridLevel, Raster};
use crate::synth::SceneBundle;

/// Per-frame and per-pair inputs the solver consumes, at either grid level.
pub trait ObservationSource: Sync {
    fn n_frames(&self) -> usize;

    /// Full-resolution intrinsics from metadata.
    fn intrinsics(&self) -> Intrinsics;

    fn low_res_factor(&self) -> usize;

    fn has_pair(&self, i: usize, j: usize, level: GridLevel) -> bool;

    /// Flow displacement `i → j` and its confidence.
    fn flow(
        &self,
        i: usize,
        j: usize,
        level: GridLevel,
    ) -> Result<(Raster<Vector2<f64>>, Raster<f64>), PipelineError>;

    /// Relative (affine-invariant) mono disparity.
    fn disp_rel(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError>;

    /// Metric mono disparity.
    fn disp_abs(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError>;

    /// Static probability, 1 = static.
    fn motion(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError>;

    fn intrinsics_at(&self, level: GridLevel) -> Intrinsics {
        match level {
            GridLevel::FullRes => self.intrinsics(),
            GridLevel::LowRes => self.intrinsics().downscaled(self.low_res_factor()),
        }
    }
}

impl ObservationSource for SceneBundle {
    fn n_frames(&self) -> usize {
        SceneBundle::n_frames(self)
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn low_res_factor(&self) -> usize {
        self.spec.low_res_factor
    }

    fn has_pair(&self, i: usize, j: usize, _: GridLevel) -> bool {
        i != j && i < self.poses.len() && j < self.poses.len()
    }

    fn flow(
        &self,
        i: usize,
        j: usize,
        level: GridLevel,
    ) -> Result<(Raster<Vector2<f64>>, Raster<f64>), PipelineError> {
        let f = SceneBundle::flow(self, i, j, level);
        Ok((f.flow, f.confidence))
    }

    fn disp_rel(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError> {
        Ok(self.priors(frame, level).0)
    }

    fn disp_abs(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError> {
        Ok(self.priors(frame, level).1)
    }

    fn motion(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError> {
        Ok(self.motion_mask(frame, level).0)
    }
}

/// Per-frame rasters are stored at full resolution; the low-res grid is their subsample.
impl ObservationSource for Dataset {
    fn n_frames(&self) -> usize {
        self.manifest.n_frames
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn low_res_factor(&self) -> usize {
        self.manifest.low_res_factor
    }

    fn has_pair(&self, i: usize, j: usize, level: GridLevel) -> bool {
        Dataset::has_pair(self, i, j, level)
    }

    fn flow(
        &self,
        i: usize,
        j: usize,
        level: GridLevel,
    ) -> Result<(Raster<Vector2<f64>>, Raster<f64>), PipelineError> {
        Ok(Dataset::flow(self, i, j, level)?)
    }

    fn disp_rel(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError> {
        Ok(at_level(
            Dataset::disp_rel(self, frame)?,
            level,
            self.manifest.low_res_factor,
        ))
    }

    fn disp_abs(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError> {
        Ok(at_level(
            Dataset::disp_abs(self, frame)?,
            level,
            self.manifest.low_res_factor,
        ))
    }

    fn motion(&self, frame: usize, level: GridLevel) -> Result<Raster<f64>, PipelineError> {
        Ok(at_level(
            Dataset::motion(self, frame)?,
            level,
            self.manifest.low_res_factor,
        ))
    }
}

fn at_level(r: Raster<f64>, level: GridLevel, factor: usize) -> Raster<f64> {
    match level {
        GridLevel::FullRes => r,
        GridLevel::LowRes => r.subsample(factor),
    }
}
