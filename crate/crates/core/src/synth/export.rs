use std::path::Path;

use rayon::prelude::*;

use super::{FrameRender, SceneBundle};
use crate::io::{
    conf_path, flow_path, frame_file, write_flo, write_intrinsics, write_manifest, write_pfm,
    write_trajectory, DatasetManifest, IoError,
};
use crate::raster::GridLevel;

impl SceneBundle {
    /// Directed pairs stored at `level`: every pair within `ba_pair_radius`
    /// for the low-res grid, the offset pairs for full res. Both directions.
    pub fn dataset_pairs(&self, level: GridLevel) -> Vec<(usize, usize)> {
        let n = self.n_frames();
        let mut pairs: Vec<(usize, usize)> = match level {
            GridLevel::LowRes => (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && i.abs_diff(j) <= self.spec.ba_pair_radius)
                .collect(),
            GridLevel::FullRes => self
                .offset_pairs()
                .into_iter()
                .flat_map(|(i, j)| [(i, j), (j, i)])
                .collect(),
        };
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Writes the bundle as a dataset directory readable by [`crate::io::Dataset`].
    pub fn write_dataset(&self, root: &Path) -> Result<DatasetManifest, IoError> {
        let manifest = DatasetManifest {
            n_frames: self.n_frames(),
            width: self.spec.width,
            height: self.spec.height,
            low_res_factor: self.spec.low_res_factor,
            low_pairs: self.dataset_pairs(GridLevel::LowRes),
            full_pairs: self.dataset_pairs(GridLevel::FullRes),
        };
        write_intrinsics(root, &self.intrinsics)?;
        write_manifest(root, &manifest)?;
        write_trajectory(&root.join("poses_gt.txt"), &self.poses)?;
        let level = GridLevel::FullRes;
        let renders: Vec<FrameRender> = (0..self.n_frames())
            .map(|f| self.render(f, level))
            .collect();
        renders.par_iter().enumerate().try_for_each(|(f, r)| {
            let (rel, abs) = self.priors_from_render(f, level, r);
            let motion = r.mover.map(|m| if m.is_some() { 0.0 } else { 1.0 });
            let name = frame_file(f, "pfm");
            write_pfm(&root.join("disp_rel").join(&name), &rel)?;
            write_pfm(&root.join("disp_abs").join(&name), &abs)?;
            write_pfm(&root.join("motion").join(&name), &motion)?;
            write_pfm(&root.join("depth_gt").join(&name), &r.depth)
        })?;
        let jobs: Vec<_> = [GridLevel::LowRes, GridLevel::FullRes]
            .into_iter()
            .flat_map(|level| {
                self.dataset_pairs(level)
                    .into_iter()
                    .map(move |(i, j)| (i, j, level))
            })
            .collect();
        jobs.into_par_iter().try_for_each(|(i, j, level)| {
            let f = match level {
                GridLevel::FullRes => self.flow_from_render(i, j, level, &renders[i]),
                GridLevel::LowRes => self.flow(i, j, level),
            };
            write_flo(&flow_path(root, i, j, level), &f.flow)?;
            write_pfm(&conf_path(root, i, j, level), &f.confidence)
        })?;
        Ok(manifest)
    }
}
