use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{induced_flow, se3_exp, Twist};
use crate::synth::{generate, BackgroundSpec, SceneSpec, TrajectoryKind};

const W: usize = 8;
const H: usize = 6;

fn intrinsics() -> Intrinsics {
    Intrinsics::centered(9.0, W, H).unwrap()
}

fn grid(values: Vec<f64>, w: usize, h: usize) -> DisparityGrid {
    DisparityGrid::from_values(Raster::from_vec(w, h, values), GridLevel::FullRes)
}

fn random_grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DisparityGrid {
    grid((0..W * H).map(|_| rng.random_range(lo..hi)).collect(), W, H)
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let mut r = || rng.random_range(-1.0..1.0);
    se3_exp(&Twist::new(
        Vector3::new(r(), r(), r()) * 0.03,
        Vector3::new(r(), r(), r()) * 0.1,
    ))
}

fn observation(
    rng: &mut ChaCha8Rng,
    g: &RigidTransform,
    d: &DisparityGrid,
    noise: f64,
) -> PairObservation {
    let f = induced_flow(g, d, &intrinsics());
    let flow = Raster::from_fn(W, H, |x, y| {
        let i = y * W + x;
        let mut e = || {
            if noise > 0.0 {
                rng.random_range(-noise..noise)
            } else {
                0.0
            }
        };
        f.coords[i] - Vector2::new(x as f64, y as f64) + Vector2::new(e(), e())
    });
    PairObservation::new(0, 1, flow, &Raster::filled(W, H, 1.0))
}

/// Central-difference gradient of `f` w.r.t. every entry of `x`.
fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1e-3);
            let x0 = x[i];
            x[i] = x0 + h;
            let fp = f(&x);
            x[i] = x0 - h;
            let fm = f(&x);
            x[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn with_values(d: &DisparityGrid, v: &[f64]) -> DisparityGrid {
    grid(v.to_vec(), d.width(), d.height())
}

#[test]
fn pair_selection_examples() {
    assert_eq!(select_pairs(2, &DEFAULT_PAIR_OFFSETS), vec![(0, 1)]);
    assert_eq!(
        select_pairs(16, &DEFAULT_PAIR_OFFSETS).len(),
        15 + 14 + 12 + 8 + 1
    );
    assert!(select_pairs(17, &DEFAULT_PAIR_OFFSETS).contains(&(1, 16)));
}

#[test]
fn flow_loss_vanishes_on_induced_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = random_grid(&mut rng, 0.2, 1.0);
    let g = random_pose(&mut rng);
    let obs = observation(&mut rng, &g, &d, 0.0);
    let l = flow_loss(&g, &intrinsics(), &d, &Raster::filled(W, H, 1.0), &obs);
    assert!(l.value.abs() < 1e-12);
}

#[test]
fn flow_uncertainty_is_stationary_at_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = random_grid(&mut rng, 0.2, 1.0);
    let g = random_pose(&mut rng);
    let obs = observation(&mut rng, &g, &d, 0.5);
    let k = intrinsics();
    let f = induced_flow(&g, &d, &k);
    let m = Raster::from_fn(W, H, |x, y| {
        let i = y * W + x;
        let r = f.coords[i] - Vector2::new(x as f64, y as f64) - obs.flow[i];
        r.x.abs() + r.y.abs()
    });
    let l = flow_loss(&g, &k, &d, &m, &obs);
    assert!(l.grad_m_i.iter().all(|g| g.abs() < 1e-12));
    // a + log-barrier is minimized there: nudging M̂ either way raises the loss
    for s in [0.9, 1.1] {
        assert!(flow_loss(&g, &k, &d, &m.map(|v| v * s), &obs).value > l.value);
    }
}

#[test]
fn flow_loss_gradients_match_finite_differences() {
    let k = intrinsics();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let d = random_grid(&mut rng, 0.2, 1.0);
        let m = random_grid(&mut rng, 0.5, 2.0).values;
        let g = random_pose(&mut rng);
        let obs = observation(&mut rng, &g, &d, 0.5);
        let l = flow_loss(&g, &k, &d, &m, &obs);
        let fd = numeric_grad(d.values.as_slice(), |v| {
            flow_loss(&g, &k, &with_values(&d, v), &m, &obs).value
        });
        assert!(rel_err(&l.grad_d_i, &fd) < 1e-4, "seed {seed}");
        let fd = numeric_grad(m.as_slice(), |v| {
            flow_loss(&g, &k, &d, &Raster::from_vec(W, H, v.to_vec()), &obs).value
        });
        assert!(rel_err(&l.grad_m_i, &fd) < 1e-4, "seed {seed}");
    }
}

#[test]
fn ratio_delta_examples() {
    assert_eq!(ratio_delta(2.0, 2.0), 1.0);
    assert_eq!(ratio_delta(1.0, 2.0), 2.0);
    assert_eq!(ratio_delta(4.0, 1.0), 4.0);
}

#[test]
fn temp_loss_is_at_floor_for_static_camera() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = random_grid(&mut rng, 0.2, 1.0);
    let obs = PairObservation::new(
        0,
        1,
        Raster::filled(W, H, Vector2::zeros()),
        &Raster::filled(W, H, 1.0),
    );
    let l = temp_loss(
        &RigidTransform::identity(),
        &intrinsics(),
        &d,
        &d,
        &Raster::filled(W, H, 1.0),
        &obs,
    );
    // δ ≡ 1 and log 1 = 0 on every pixel
    assert!((l.value - 1.0).abs() < 1e-12);
    assert!(l.grad_d_i.iter().chain(&l.grad_d_j).all(|g| *g == 0.0));
}

#[test]
fn temp_loss_gradients_match_finite_differences() {
    let k = intrinsics();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let di = random_grid(&mut rng, 0.2, 1.0);
        let dj = random_grid(&mut rng, 0.2, 1.0);
        let m = random_grid(&mut rng, 0.5, 2.0).values;
        let g = random_pose(&mut rng);
        let obs = observation(&mut rng, &g, &di, 0.5);
        let l = temp_loss(&g, &k, &di, &dj, &m, &obs);
        assert!(l.value > 0.0);
        let fd = numeric_grad(di.values.as_slice(), |v| {
            temp_loss(&g, &k, &with_values(&di, v), &dj, &m, &obs).value
        });
        assert!(rel_err(&l.grad_d_i, &fd) < 1e-4, "seed {seed}");
        let fd = numeric_grad(dj.values.as_slice(), |v| {
            temp_loss(&g, &k, &di, &with_values(&dj, v), &m, &obs).value
        });
        assert!(rel_err(&l.grad_d_j, &fd) < 1e-4, "seed {seed}");
        let fd = numeric_grad(m.as_slice(), |v| {
            temp_loss(&g, &k, &di, &dj, &Raster::from_vec(W, H, v.to_vec()), &obs).value
        });
        assert!(rel_err(&l.grad_m_i, &fd) < 1e-4, "seed {seed}");
    }
}

#[test]
fn si_loss_examples() {
    let a = grid(vec![1.0, 1.0], 2, 1);
    assert!(
        (prior_si_loss(&grid(vec![1.0, std::f64::consts::E], 2, 1), &a).value - 0.25).abs() < 1e-15
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = random_grid(&mut rng, 0.2, 1.0);
    assert!(prior_si_loss(&d.scaled(3.7), &d).value.abs() < 1e-15);
}

proptest! {
    #[test]
    fn si_loss_is_variance_and_scale_invariant(seed in 0u64..1000, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_grid(&mut rng, 0.05, 2.0);
        let a = random_grid(&mut rng, 0.05, 2.0);
        let r: Vec<f64> = (0..W * H).map(|p| d.values[p].ln() - a.values[p].ln()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64;
        let l = prior_si_loss(&d, &a).value;
        prop_assert!((l - var).abs() < 1e-12);
        prop_assert!((prior_si_loss(&d.scaled(c), &a).value - l).abs() < 1e-10);
    }
}

#[test]
fn si_loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let d = random_grid(&mut rng, 0.2, 1.0);
        let a = random_grid(&mut rng, 0.2, 1.0);
        let fd = numeric_grad(d.values.as_slice(), |v| {
            prior_si_loss(&with_values(&d, v), &a).value
        });
        assert!(rel_err(&prior_si_loss(&d, &a).grad_d, &fd) < 1e-4);
    }
}

#[test]
fn grad_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = random_grid(&mut rng, 0.2, 1.0);
    assert!(prior_grad_loss(&d.scaled(2.0), &d, 4, 5.0).value.abs() < 1e-15);
    // R = [[0, 1], [0, 1]]: the one interior pixel has ∇ₓR = 1, ∇ᵧR = 0
    let e = std::f64::consts::E;
    let l = prior_grad_loss(
        &grid(vec![1.0, e, 1.0, e], 2, 2),
        &grid(vec![1.0; 4], 2, 2),
        1,
        5.0,
    );
    assert!((l.value - (1.0 - (-5.0f64).exp())).abs() < 1e-12);
}

#[test]
fn grad_loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (w, h) = (16, 12);
        let d = grid(
            (0..w * h).map(|_| rng.random_range(0.2..1.0)).collect(),
            w,
            h,
        );
        let a = grid(
            (0..w * h).map(|_| rng.random_range(0.2..1.0)).collect(),
            w,
            h,
        );
        let l = prior_grad_loss(&d, &a, 3, 5.0);
        let fd = numeric_grad(d.values.as_slice(), |v| {
            prior_grad_loss(&with_values(&d, v), &a, 3, 5.0).value
        });
        assert!(rel_err(&l.grad_d, &fd) < 1e-4, "seed {seed}");
    }
}

#[test]
fn normal_loss_examples() {
    let k = intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = random_grid(&mut rng, 0.5, 0.6);
    assert!(prior_normal_loss(&d, &normal_map(&d, &k), &k).value.abs() < 1e-12);
}

#[test]
fn orthogonal_planes_contribute_one() {
    let k = intrinsics();
    // planes x + z = 2 and x − z = −2, with d = (1 ± ray.x) / 2
    let plane = |sx: f64| {
        grid(
            (0..W * H)
                .map(|p| (1.0 + sx * k.ray((p % W) as f64, (p / W) as f64).x) / 2.0)
                .collect(),
            W,
            H,
        )
    };
    let a = plane(1.0);
    let b = plane(-1.0);
    let l = prior_normal_loss(&a, &normal_map(&b, &k), &k);
    assert!((l.value - 1.0).abs() < 1e-9, "{}", l.value);
}

#[test]
fn normal_loss_gradients_match_finite_differences() {
    let k = intrinsics();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let d = random_grid(&mut rng, 0.4, 0.6);
        let a = random_grid(&mut rng, 0.4, 0.6);
        let na = normal_map(&a, &k);
        let l = prior_normal_loss(&d, &na, &k);
        let fd = numeric_grad(d.values.as_slice(), |v| {
            prior_normal_loss(&with_values(&d, v), &na, &k).value
        });
        assert!(rel_err(&l.grad_d, &fd) < 1e-3, "seed {seed}");
    }
}

fn small_data(rng: &mut ChaCha8Rng, n: usize) -> CvdData {
    let k = intrinsics();
    let poses: Vec<_> = (0..n).map(|_| random_pose(rng)).collect();
    let disp: Vec<_> = (0..n).map(|_| random_grid(rng, 0.3, 0.8)).collect();
    let align: Vec<_> = (0..n).map(|_| random_grid(rng, 0.3, 0.8)).collect();
    let mut pairs = Vec::new();
    for (i, j) in select_pairs(n, &DEFAULT_PAIR_OFFSETS)
        .into_iter()
        .flat_map(|(i, j)| [(i, j), (j, i)])
    {
        let mut o = observation(rng, &relative_pose(&poses[i], &poses[j]), &disp[i], 0.3);
        o.i = i;
        o.j = j;
        pairs.push(o);
    }
    let motion = (0..n).map(|_| Raster::filled(W, H, 1.0)).collect();
    CvdData::new(k, poses, align, motion, pairs).unwrap()
}

#[test]
fn total_objective_sums_sub_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = small_data(&mut rng, 4);
    let config = CvdConfig::default();
    let state = DepthState::initial(&data, &config);
    let d: Vec<_> = (0..4).map(|_| random_grid(&mut rng, 0.3, 0.8)).collect();
    let obj = total_objective(&d, &state.uncertainty, &config, &data);
    let k = &data.intrinsics;
    let mut expected = 0.0;
    for p in &data.pairs {
        let g = relative_pose(&data.poses[p.i], &data.poses[p.j]);
        let m = &state.uncertainty[p.i];
        expected += flow_loss(&g, k, &d[p.i], m, p).value
            + 0.2 * temp_loss(&g, k, &d[p.i], &d[p.j], m, p).value;
    }
    for f in 0..4 {
        let a = &data.align[f];
        expected += prior_si_loss(&d[f], a).value
            + prior_grad_loss(&d[f], a, 4, 5.0).value
            + 4.0 * prior_normal_loss(&d[f], &data.align_normals[f], k).value;
    }
    assert!((obj.value - expected).abs() < 1e-12 * expected.abs());

    let flat: Vec<f64> = d.iter().flat_map(|g| g.values.iter().copied()).collect();
    let fd = numeric_grad(&flat, |v| {
        let grids: Vec<_> = v.chunks(W * H).map(|c| grid(c.to_vec(), W, H)).collect();
        total_objective(&grids, &state.uncertainty, &config, &data).value
    });
    let analytic: Vec<f64> = obj.grad_d.concat();
    assert!(rel_err(&analytic, &fd) < 1e-4);
}

#[test]
fn zero_weight_removes_a_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = small_data(&mut rng, 3);
    let state = DepthState::initial(&data, &CvdConfig::default());
    let d: Vec<_> = (0..3).map(|_| random_grid(&mut rng, 0.3, 0.8)).collect();
    let only_flow = CvdConfig {
        w_temp: 0.0,
        w_prior: 0.0,
        ..Default::default()
    };
    let obj = total_objective(&d, &state.uncertainty, &only_flow, &data);
    let mut grad = vec![vec![0.0; W * H]; 3];
    for p in &data.pairs {
        let g = relative_pose(&data.poses[p.i], &data.poses[p.j]);
        let l = flow_loss(&g, &data.intrinsics, &d[p.i], &state.uncertainty[p.i], p);
        for (a, b) in grad[p.i].iter_mut().zip(&l.grad_d_i) {
            *a += b;
        }
    }
    assert_eq!(obj.grad_d, grad);
    assert_eq!(
        (
            obj.terms.temp,
            obj.terms.si,
            obj.terms.grad,
            obj.terms.normal
        ),
        (0.0, 0.0, 0.0, 0.0)
    );
}

#[test]
fn uncertainty_initialization_follows_motion_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data = small_data(&mut rng, 2);
    data.motion[0] = Raster::from_fn(W, H, |x, _| if x < 4 { 1.0 } else { 0.0 });
    let config = CvdConfig::default();
    let s = DepthState::initial(&data, &config);
    assert_eq!(s.uncertainty[0][0], 1.0);
    assert!((s.uncertainty[0][7] - 1.0 / config.m_floor).abs() < 1e-9);
    let off = DepthState::initial(
        &data,
        &CvdConfig {
            use_motion_maps: false,
            ..config
        },
    );
    assert!(off.uncertainty[0].iter().all(|&m| m == 1.0));
}

#[test]
fn non_finite_loss_aborts_with_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data = small_data(&mut rng, 2);
    let config = CvdConfig {
        warmup_steps: 3,
        main_steps: 3,
        ..Default::default()
    };
    let mut state = DepthState::initial(&data, &config);
    state.uncertainty[1][5] = 0.0;
    match optimize(state, &config, &data) {
        Err(CvdError::NonFiniteLoss { step, trace }) => {
            assert_eq!(step, 0);
            assert_eq!(trace.len(), 1);
        }
        other => panic!("{other:?}"),
    }
}

fn gt_problem(kind: TrajectoryKind, magnitude: f64) -> (CvdData, DepthState) {
    let b = generate(&SceneSpec {
        trajectory: kind,
        magnitude,
        n_frames: 6,
        width: 32,
        height: 24,
        low_res_factor: 4,
        focal: 30.0,
        background: BackgroundSpec {
            base_depth: 3.0,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap();
    let n = b.n_frames();
    let gt: Vec<_> = (0..n)
        .map(|f| b.gt_disparity(f, GridLevel::FullRes))
        .collect();
    let identity = MonoAlignment {
        alpha: 1.0,
        beta: 0.0,
        frame_alpha: vec![1.0; n],
    };
    let data = CvdData::from_source(
        &b,
        b.intrinsics,
        b.poses.clone(),
        &identity,
        &DEFAULT_PAIR_OFFSETS,
    )
    .unwrap();
    assert_eq!(data.align, gt);
    let state = DepthState::initial(&data, &CvdConfig::default());
    (data, state)
}

fn max_disparity_change(a: &DepthState, b: &DepthState) -> f64 {
    a.disparity
        .iter()
        .zip(&b.disparity)
        .flat_map(|(x, y)| {
            x.values
                .iter()
                .zip(y.values.iter())
                .map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let config = CvdConfig {
        warmup_steps: 10,
        main_steps: 40,
        ..Default::default()
    };
    let (data, state) = gt_problem(TrajectoryKind::Static, 0.0);
    let out = optimize(state.clone(), &config, &data).unwrap();
    assert!(max_disparity_change(&state, &out.state) < 1e-6);
    assert_eq!(out.trace.len(), 50);

    // bilinear resampling in the temporal term is not exact under parallax
    let config = CvdConfig {
        w_temp: 0.0,
        ..config
    };
    let (data, state) = gt_problem(TrajectoryKind::Lateral, 0.05);
    let before = data.clone();
    let out = optimize(state.clone(), &config, &data).unwrap();
    assert!(max_disparity_change(&state, &out.state) < 1e-6);
    assert_eq!(data, before);
}
