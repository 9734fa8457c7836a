use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use camdepth::cvd::{optimize, CvdData, CvdError, DepthState, TraceEntry};
use camdepth::geometry::{Intrinsics, RigidTransform};
use camdepth::io::{
    frame_file, parse_key_values, read_pfm, read_trajectory, write_bytes, write_pfm,
    write_trajectory, Dataset, IoError,
};
use camdepth::metrics::{ate_rte_rre, depth_metrics, DepthOptions, TrajectoryOptions};
use camdepth::pipeline::{solve_video, MonoAlignment, VideoSolveState};
use camdepth::raster::Raster;
use camdepth::synth::{generate, SceneSpec};

use crate::{CliError, RunConfig, RunManifest, EXIT_OK, EXIT_TRACKING};

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const STAGES_FILE: &str = "stages.csv";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| {
        CliError::Io(IoError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
}

/// Generates a synthetic scene from a spec file and writes it as a dataset.
/// `seed` replaces the spec's seed when given.
pub fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<u8, CliError> {
    let mut spec = SceneSpec::parse(&read_text(spec_path)?)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let bundle = generate(&spec)?;
    let resolved = spec.to_text();
    bundle.write_dataset(out)?;
    write_bytes(&out.join("spec.txt"), resolved.as_bytes())?;
    let mut m = RunManifest::new("synth", spec.seed);
    m.set("spec", spec_path.display());
    m.set_block("spec", &resolved);
    m.finish(out)?;
    println!("wrote {} frames to {}", bundle.n_frames(), out.display());
    Ok(EXIT_OK)
}

/// Trajectory with every frame; frames the solver never registered repeat
/// the previous registered pose (or the next one at the start).
fn filled_poses(poses: &[Option<RigidTransform>]) -> (Vec<RigidTransform>, Vec<usize>) {
    let missing: Vec<usize> = (0..poses.len()).filter(|&f| poses[f].is_none()).collect();
    let first = poses
        .iter()
        .flatten()
        .next()
        .copied()
        .unwrap_or_else(RigidTransform::identity);
    let mut last = first;
    let out = poses
        .iter()
        .map(|p| {
            if let Some(p) = p {
                last = *p;
            }
            last
        })
        .collect();
    (out, missing)
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn solve_report(state: &VideoSolveState, full: &Intrinsics, missing: &[usize]) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("tracking_lost", state.tracking_lost.to_string());
    kv("missing_poses", join(missing));
    kv("keyframes", join(&state.keyframes));
    kv("focal_px", (state.focal * full.max_dim()).to_string());
    kv("focal_enabled", state.focal_enabled.to_string());
    kv("w_d", state.w_d.to_string());
    kv("gamma_d", state.config.gate.gamma_d.to_string());
    if let Some(r) = &state.report {
        kv("median_hd", r.median_hd.to_string());
        kv("focal_h", r.focal_h.to_string());
    }
    kv("alpha", state.alignment.alpha.to_string());
    kv("beta", state.alignment.beta.to_string());
    kv("disparity_scale", state.disparity_scale.to_string());
    s
}

/// Camera and keyframe-disparity solve of a dataset directory.
pub fn solve(dataset: &Path, config: &RunConfig, out: &Path, seed: u64) -> Result<u8, CliError> {
    let ds = Dataset::open(dataset)?;
    ds.validate()?;
    let state = solve_video(&ds, &config.pipeline)?;
    let (poses, missing) = filled_poses(&state.metric_poses());
    write_trajectory(&out.join(TRAJECTORY_FILE), &poses)?;
    for &k in &state.keyframes {
        if let Some(d) = state.metric_disparity(k) {
            let r = Raster::from_fn(d.width(), d.height(), |x, y| {
                if *d.valid.get(x, y) {
                    *d.values.get(x, y)
                } else {
                    f64::NAN
                }
            });
            write_pfm(&out.join("disparity").join(frame_file(k, "pfm")), &r)?;
        }
    }
    let report = solve_report(&state, &ds.intrinsics, &missing);
    write_bytes(&out.join(REPORT_FILE), report.as_bytes())?;
    let mut csv = String::from("stage,initial_cost,final_cost,iterations,status\n");
    for r in &state.log {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:?}",
            r.stage, r.initial_cost, r.final_cost, r.iterations, r.status
        );
    }
    write_bytes(&out.join(STAGES_FILE), csv.as_bytes())?;

    let mut m = RunManifest::new("solve", seed);
    m.set("dataset", dataset.display());
    m.set_block("config", &config.to_text());
    m.set_block("report", &report);
    m.finish(out)?;

    println!("{:<16} {}", "frames", state.n_frames());
    println!("{:<16} {}", "keyframes", state.keyframes.len());
    println!(
        "{:<16} {:.3}",
        "focal_px",
        state.focal * ds.intrinsics.max_dim()
    );
    println!("{:<16} {:.3e}", "w_d", state.w_d);
    println!("{:<16} {}", "focal_enabled", state.focal_enabled);
    println!("{:<16} {}", "tracking_lost", state.tracking_lost);
    Ok(if state.tracking_lost {
        EXIT_TRACKING
    } else {
        EXIT_OK
    })
}

fn report_value(
    report: &[(usize, String, String)],
    path: &Path,
    key: &str,
) -> Result<f64, CliError> {
    report
        .iter()
        .find(|(_, k, _)| k == key)
        .and_then(|(_, _, v)| v.parse().ok())
        .ok_or_else(|| CliError::Other(format!("{}: missing or bad `{key}`", path.display())))
}

fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from(TraceEntry::CSV_HEADER);
    s.push('\n');
    for e in trace {
        s.push_str(&e.to_csv());
        s.push('\n');
    }
    s
}

/// Full-resolution depth refinement from a dataset and a `solve` output directory.
pub fn cvd(
    dataset: &Path,
    solve_dir: &Path,
    config: &RunConfig,
    out: &Path,
    seed: u64,
) -> Result<u8, CliError> {
    let ds = Dataset::open(dataset)?;
    let report_path = solve_dir.join(REPORT_FILE);
    let report = parse_key_values(&report_path, &read_text(&report_path)?)?;
    let focal = report_value(&report, &report_path, "focal_px")?;
    let alignment = MonoAlignment {
        alpha: report_value(&report, &report_path, "alpha")?,
        beta: report_value(&report, &report_path, "beta")?,
        frame_alpha: Vec::new(),
    };
    let poses = read_trajectory(&solve_dir.join(TRAJECTORY_FILE))?;
    let n = ds.manifest.n_frames;
    if poses.len() != n {
        return Err(CliError::Other(format!(
            "{} has {} poses for {n} frames",
            solve_dir.join(TRAJECTORY_FILE).display(),
            poses.len()
        )));
    }
    let k0 = ds.intrinsics;
    let s = focal / k0.fx;
    let k = Intrinsics::new(focal, k0.fy * s, k0.cx, k0.cy, k0.width, k0.height)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let data = CvdData::from_source(&ds, k, poses, &alignment, &config.cvd.pair_offsets)?;
    let initial = DepthState::initial(&data, &config.cvd);

    let mut m = RunManifest::new("cvd", seed);
    m.set("dataset", dataset.display());
    m.set("solve", solve_dir.display());
    m.set_block("config", &config.to_text());
    match optimize(initial, &config.cvd, &data) {
        Ok(result) => {
            write_bytes(&out.join(TRACE_FILE), trace_csv(&result.trace).as_bytes())?;
            for (f, (d, u)) in result
                .state
                .disparity
                .iter()
                .zip(&result.state.uncertainty)
                .enumerate()
            {
                let name = frame_file(f, "pfm");
                let disp = Raster::from_fn(d.width(), d.height(), |x, y| {
                    if *d.valid.get(x, y) {
                        *d.values.get(x, y)
                    } else {
                        f64::NAN
                    }
                });
                write_pfm(&out.join("disparity").join(&name), &disp)?;
                write_pfm(&out.join("depth").join(&name), &disp.map(|v| 1.0 / v))?;
                write_pfm(&out.join("uncertainty").join(&name), u)?;
            }
            m.set("status", "ok");
            m.finish(out)?;
            if let (Some(a), Some(b)) = (result.trace.first(), result.trace.last()) {
                println!("{:<10} {:.6e}", "initial", a.total);
                println!("{:<10} {:.6e}", "final", b.total);
            }
            Ok(EXIT_OK)
        }
        Err(CvdError::NonFiniteLoss { step, trace }) => {
            write_bytes(&out.join(TRACE_FILE), trace_csv(&trace).as_bytes())?;
            m.set("status", format!("non_finite_loss at step {step}"));
            m.finish(out)?;
            Err(CliError::Numeric(format!(
                "loss is not finite at step {step}"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn write_metrics(out: Option<&Path>, rows: &[(&str, f64)]) -> Result<(), CliError> {
    for (k, v) in rows {
        println!("{k:<10} {v:.6}");
    }
    if let Some(out) = out {
        let header: Vec<&str> = rows.iter().map(|r| r.0).collect();
        let values: Vec<String> = rows.iter().map(|r| r.1.to_string()).collect();
        let csv = format!("{}\n{}\n", header.join(","), values.join(","));
        write_bytes(&out.join(METRICS_FILE), csv.as_bytes())?;
    }
    Ok(())
}

/// ATE / RTE / RRE of an estimated trajectory file against a reference.
pub fn eval_traj(
    est: &Path,
    gt: &Path,
    opts: &TrajectoryOptions,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let m = ate_rte_rre(&read_trajectory(est)?, &read_trajectory(gt)?, opts)?;
    write_metrics(out, &[("ate", m.ate), ("rte", m.rte), ("rre_deg", m.rre)])?;
    Ok(EXIT_OK)
}

fn pfm_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        CliError::Io(IoError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "pfm"))
        .collect();
    files.sort();
    Ok(files)
}

/// Depth metrics of every `.pfm` in `est` against the same file name in `gt`.
pub fn eval_depth(
    est: &Path,
    gt: &Path,
    opts: &DepthOptions,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let files = pfm_files(est)?;
    if files.is_empty() {
        return Err(CliError::Other(format!("{}: no .pfm files", est.display())));
    }
    let mut e = Vec::with_capacity(files.len());
    let mut g = Vec::with_capacity(files.len());
    for f in &files {
        e.push(read_pfm(f)?);
        g.push(read_pfm(&gt.join(f.file_name().unwrap_or_default()))?);
    }
    let m = depth_metrics(&e, &g, opts)?;
    write_metrics(
        out,
        &[
            ("abs_rel", m.abs_rel),
            ("log_rmse", m.log_rmse),
            ("delta_125", m.delta_125),
        ],
    )?;
    Ok(EXIT_OK)
}
