use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::problem::EdgeFrame;
use super::*;
use crate::frame_graph::EdgeObservation;
use crate::geometry::{se3_exp, Intrinsics, RigidTransform, Twist};
use crate::raster::{DisparityGrid, GridLevel, Raster};

fn random_twist(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Twist {
    let mut v = [0.0; 6];
    for (k, x) in v.iter_mut().enumerate() {
        let s = if k < 3 { rot } else { trans };
        *x = rng.random_range(-s..s);
    }
    Twist::from_slice(&v)
}

fn project_all(problem: &BaProblem, edge: &Edge) -> Raster<Vector2<f64>> {
    let frame = EdgeFrame::new(problem, edge);
    let (w, h) = problem.grid_size();
    Raster::from_fn(w, h, |x, y| {
        let p = y * w + x;
        problem.disparities[edge.i]
            .at(p)
            .and_then(|d| frame.point(x as f64, y as f64, d))
            .map(|(_, pt)| frame.project(&pt))
            .unwrap_or(Vector2::new(f64::NAN, f64::NAN))
    })
}

/// Observations generated by the ground truth, so the GT state has zero cost
/// when `noise == 0`.
fn random_problem(
    seed: u64,
    nodes: usize,
    w: usize,
    h: usize,
    noise: f64,
) -> (BaProblem, BaProblem) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics::centered(0.9 * w.max(h) as f64, w, h).unwrap();
    let mut poses = vec![RigidTransform::identity()];
    for _ in 1..nodes {
        let step = random_twist(&mut rng, 0.03, 0.15);
        let last = *poses.last().unwrap();
        poses.push(se3_exp(&step).compose(&last));
    }
    let disparities: Vec<DisparityGrid> = (0..nodes)
        .map(|_| {
            DisparityGrid::from_values(
                Raster::from_fn(w, h, |_, _| rng.random_range(0.3..1.5)),
                GridLevel::LowRes,
            )
        })
        .collect();
    let focal = k.fx / k.max_dim();
    let mut gt = BaProblem::new(k, focal, poses, disparities, Vec::new());
    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in 0..nodes {
            if i == j || i.abs_diff(j) > 2 {
                continue;
            }
            let probe = Edge {
                i,
                j,
                obs: Arc::new(EdgeObservation {
                    target: Raster::filled(w, h, Vector2::zeros()),
                    confidence: Raster::filled(w, h, 1.0),
                    weight: Raster::filled(w, h, 1.0),
                }),
            };
            let mut target = project_all(&gt, &probe);
            for t in target.as_mut_slice() {
                *t += Vector2::new(
                    rng.random_range(-noise..=noise),
                    rng.random_range(-noise..=noise),
                );
            }
            let weight = Raster::from_fn(w, h, |_, _| rng.random_range(0.2..1.0));
            edges.push(Edge {
                i,
                j,
                obs: Arc::new(EdgeObservation {
                    target,
                    confidence: weight.clone(),
                    weight,
                }),
            });
        }
    }
    gt.edges = edges;

    let mut init = gt.clone();
    for i in 1..nodes {
        init.poses[i] = init.poses[i].retract(&random_twist(&mut rng, 0.01, 0.03));
    }
    for g in init.disparities.iter_mut() {
        for v in g.values.as_mut_slice() {
            *v *= rng.random_range(0.9..1.1);
        }
    }
    (gt, init)
}

fn central<F: Fn(f64) -> Vector2<f64>>(f: F, h: f64) -> Vector2<f64> {
    (f(h) - f(-h)) / (2.0 * h)
}

fn rel_err(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

#[test]
fn jacobians_match_finite_differences() {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (_, mut problem) = random_problem(seed, 3, 5, 4, 0.0);
        problem.optimize_focal = true;
        let jacs = analytic_jacobians(&problem);
        let (w, _) = problem.grid_size();
        let eidx = seed as usize % problem.edges.len();
        let edge = problem.edges[eidx].clone();
        let pixel = (seed as usize * 7) % (problem.intrinsics.width * problem.intrinsics.height);
        let Some(jac) = jacs[eidx][pixel] else {
            continue;
        };
        let (u, v) = ((pixel % w) as f64, (pixel / w) as f64);
        let eval = |p: &BaProblem| {
            let frame = EdgeFrame::new(p, &edge);
            let d = p.disparities[edge.i].values[pixel];
            frame.project(&frame.point(u, v, d).unwrap().1)
        };
        for c in 0..6 {
            let mut dir = [0.0; 6];
            dir[c] = 1.0;
            let fd_i = central(
                |h| {
                    let mut p = problem.clone();
                    p.poses[edge.i] = p.poses[edge.i].retract(&Twist::from_slice(&dir).scale(h));
                    eval(&p)
                },
                eps,
            );
            let fd_j = central(
                |h| {
                    let mut p = problem.clone();
                    p.poses[edge.j] = p.poses[edge.j].retract(&Twist::from_slice(&dir).scale(h));
                    eval(&p)
                },
                eps,
            );
            worst = worst.max(rel_err(jac.d_pose_i.column(c).into_owned(), fd_i));
            worst = worst.max(rel_err(jac.d_pose_j.column(c).into_owned(), fd_j));
        }
        let fd_d = central(
            |h| {
                let mut p = problem.clone();
                p.disparities[edge.i].values[pixel] += h;
                eval(&p)
            },
            eps,
        );
        let fd_f = central(
            |h| {
                let mut p = problem.clone();
                p.focal *= h.exp();
                eval(&p)
            },
            eps,
        );
        worst = worst.max(rel_err(jac.d_disparity, fd_d));
        worst = worst.max(rel_err(jac.d_log_focal, fd_f));
    }
    assert!(worst < 1e-4, "worst relative Jacobian error {worst}");
}

/// Dense `JᵀWJ`, `JᵀWr` built row by row, with the prior appended as identity rows.
fn dense_oracle(problem: &BaProblem) -> (DMatrix<f64>, DVector<f64>) {
    let layout = ParamLayout::new(problem);
    let n = layout.n_cam + layout.n_disp;
    let jacs = analytic_jacobians(problem);
    let res = reprojection_residuals(problem);
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for (k, edge) in problem.edges.iter().enumerate() {
        for p in 0..layout.pixels {
            let Some(jac) = jacs[k][p] else { continue };
            let rows = dense_pixel_rows(&layout, edge, p, &jac);
            let w = edge.obs.weight[p];
            h += rows.transpose() * &rows * w;
            g += rows.transpose() * res.edges[k].residual[p] * w;
        }
    }
    if let Some(prior) = &problem.mono_prior {
        for node in 0..problem.num_nodes() {
            let Some(off) = layout.disp_offset[node] else {
                continue;
            };
            for p in 0..layout.pixels {
                if let (Some(d), Some(a)) =
                    (problem.disparities[node].at(p), prior.align[node].at(p))
                {
                    let c = layout.n_cam + off + p;
                    h[(c, c)] += prior.weight;
                    g[c] += prior.weight * (a - d);
                }
            }
        }
    }
    (h, g)
}

fn with_prior(mut problem: BaProblem, weight: f64, seed: u64) -> BaProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let align = problem
        .disparities
        .iter()
        .map(|d| d.map_values(|v| v * rng.random_range(0.8..1.2)))
        .collect();
    problem.mono_prior = Some(MonoPrior { align, weight });
    problem
}

trait MapValues {
    fn map_values<F: FnMut(f64) -> f64>(&self, f: F) -> DisparityGrid;
}

impl MapValues for DisparityGrid {
    fn map_values<F: FnMut(f64) -> f64>(&self, mut f: F) -> DisparityGrid {
        let mut out = self.clone();
        for v in out.values.as_mut_slice() {
            *v = f(*v);
        }
        out
    }
}

#[test]
fn block_system_matches_dense_oracle() {
    for seed in 0..10 {
        let (_, mut problem) = random_problem(100 + seed, 4, 5, 4, 0.5);
        problem.optimize_focal = seed % 2 == 0;
        problem.fixed_disparities.insert(3);
        let problem = with_prior(problem, 0.3, seed);
        let sys = assemble_system(&problem);
        let (h, g) = sys.to_dense();
        let (ho, go) = dense_oracle(&problem);
        let scale = ho.amax().max(1.0);
        assert!(
            (&h - &ho).amax() < 1e-9 * scale,
            "H mismatch {}",
            (&h - &ho).amax()
        );
        assert!((&g - &go).amax() < 1e-9 * scale);
        assert!((sys.cost - objective(&problem)).abs() < 1e-9 * (1.0 + sys.cost));

        let jacs = analytic_jacobians(&problem);
        let res = reprojection_residuals(&problem);
        let rebuilt = build_normal_equations(&problem, &jacs, &res);
        assert!((rebuilt.to_dense().0 - &h).amax() < 1e-12 * scale);
    }
}

#[test]
fn schur_matches_dense_solve() {
    for seed in 0..20 {
        let (_, mut problem) = random_problem(200 + seed, 3 + seed as usize % 3, 4, 3, 0.3);
        problem.optimize_focal = seed % 3 != 0;
        let problem = with_prior(problem, 0.05, seed);
        let sys = assemble_system(&problem);
        let lambda = [0.0, 1e-4, 1e-1][seed as usize % 3];
        let step = schur_solve(&sys, lambda).unwrap();

        let (mut h, g) = sys.to_dense();
        for i in 0..h.nrows() {
            h[(i, i)] = damped(h[(i, i)], lambda);
        }
        let dense = h.lu().solve(&g).unwrap();
        let mut ours = step.camera.as_slice().to_vec();
        ours.extend_from_slice(&step.disparity);
        let ours = DVector::from_vec(ours);
        let err = (&ours - &dense).norm() / (1.0 + dense.norm());
        assert!(err < 1e-8, "seed {seed}: relative error {err}");
    }
}

#[test]
fn lm_cost_is_monotone_and_reaches_zero_without_noise() {
    for seed in 0..5 {
        let (gt, mut init) = random_problem(300 + seed, 4, 6, 5, 0.0);
        init.poses[1] = gt.poses[1];
        init.fixed_poses.insert(1);
        let (_, report) = lm_iterate(&init, &LmOptions::default()).unwrap();
        let mut prev = report.initial_cost;
        for it in &report.trace {
            assert!(it.cost <= prev);
            prev = it.cost;
        }
        assert!(
            report.final_cost < 1e-8 * report.initial_cost.max(1.0),
            "{report:?}"
        );
    }
}

#[test]
fn lm_with_noise_is_monotone() {
    let (_, init) = random_problem(400, 5, 6, 5, 0.5);
    let init = with_prior(init, 0.05, 400);
    let (_, report) = lm_iterate(&init, &LmOptions::default()).unwrap();
    assert!(report.final_cost < report.initial_cost);
    assert!(report.trace.windows(2).all(|w| w[1].cost <= w[0].cost));
}

#[test]
fn zero_weight_edges_do_not_change_the_result() {
    let (_, init) = random_problem(500, 4, 5, 4, 0.2);
    let mut with_dead = init.clone();
    let (w, h) = init.grid_size();
    with_dead.edges.push(Edge {
        i: 0,
        j: 3,
        obs: Arc::new(EdgeObservation {
            target: Raster::filled(w, h, Vector2::new(3.0, -40.0)),
            confidence: Raster::filled(w, h, 0.0),
            weight: Raster::filled(w, h, 0.0),
        }),
    });
    let (a, _) = lm_iterate(&init, &LmOptions::default()).unwrap();
    let (b, _) = lm_iterate(&with_dead, &LmOptions::default()).unwrap();
    for i in 0..4 {
        assert_eq!(a.poses[i], b.poses[i]);
        assert_eq!(a.disparities[i], b.disparities[i]);
    }
}

#[test]
fn strong_prior_pins_disparity_to_alignment() {
    let (_, init) = random_problem(600, 3, 5, 4, 0.3);
    let init = with_prior(init, 1e6, 600);
    let (out, _) = lm_iterate(&init, &LmOptions::default()).unwrap();
    let prior = init.mono_prior.as_ref().unwrap();
    for node in 1..3 {
        for p in 0..20 {
            let d = out.disparities[node].values[p];
            let a = prior.align[node].values[p];
            assert!((d - a).abs() < 1e-3 * a, "{d} vs {a}");
        }
    }
}

#[test]
fn motion_only_keeps_disparity_bit_identical() {
    let (_, init) = random_problem(700, 3, 5, 4, 0.1);
    let (out, report) = motion_only_ba(&init, &LmOptions::default()).unwrap();
    assert!(report.final_cost <= report.initial_cost);
    for i in 0..3 {
        assert_eq!(out.disparities[i], init.disparities[i]);
    }
    assert_eq!(out.poses[0], init.poses[0]);
}

#[test]
fn focal_is_recovered_with_rotation_and_depth_variation() {
    let (gt, mut init) = random_problem(800, 5, 8, 6, 0.0);
    init.optimize_focal = true;
    init.focal = gt.focal * 1.05;
    let (out, _) = lm_iterate(
        &init,
        &LmOptions {
            max_iters: 60,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        (out.focal / gt.focal - 1.0).abs() < 1e-4,
        "{} vs {}",
        out.focal,
        gt.focal
    );
}

#[test]
fn missing_gauge_is_rejected() {
    let (_, mut init) = random_problem(900, 2, 3, 3, 0.0);
    init.fixed_poses.clear();
    assert_eq!(
        lm_iterate(&init, &LmOptions::default()).unwrap_err(),
        BaError::GaugeNotFixed
    );
}

#[test]
fn single_pixel_cost() {
    let k = Intrinsics::centered(10.0, 1, 1).unwrap();
    let d = DisparityGrid::constant(1, 1, 1.0, GridLevel::LowRes);
    let obs = EdgeObservation {
        target: Raster::filled(1, 1, Vector2::new(3.0, 4.0)),
        confidence: Raster::filled(1, 1, 1.0),
        weight: Raster::filled(1, 1, 1.0),
    };
    let problem = BaProblem::new(
        k,
        10.0,
        vec![RigidTransform::identity(); 2],
        vec![d.clone(), d],
        vec![Edge {
            i: 0,
            j: 1,
            obs: Arc::new(obs),
        }],
    );
    assert_eq!(reprojection_residuals(&problem).cost, 25.0);
    assert_eq!(objective(&problem), 25.0);
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let (gt, _) = random_problem(1000, 4, 5, 4, 0.0);
    let sys = assemble_system(&gt);
    assert!(sys.r_cam.amax() < 1e-10);
    assert!(sys.r_disp.iter().all(|g| g.abs() < 1e-10));
    let (out, report) = lm_iterate(&gt, &LmOptions::default()).unwrap();
    assert!(report.iterations() <= 1);
    for i in 0..4 {
        assert!(crate::geometry::pose_geodesic_error(&out.poses[i], &gt.poses[i]).unwrap() < 1e-9);
    }
}

#[test]
fn huge_damping_gives_vanishing_step() {
    let (_, init) = random_problem(1100, 3, 4, 3, 0.2);
    let sys = assemble_system(&init);
    let small = schur_solve(&sys, 1e-4).unwrap().norm();
    let big = schur_solve(&sys, 1e12).unwrap().norm();
    assert!(big < 1e-9 * small.max(1.0));
}

#[test]
fn raw_and_normalized_focal_converge_to_same_poses() {
    let (_, init) = random_problem(1200, 4, 5, 4, 0.0);
    let mut raw = init.clone();
    raw.focal = init.focal_px();
    raw.focal_scale = 1.0;
    let (a, _) = lm_iterate(&init, &LmOptions::default()).unwrap();
    let (b, _) = lm_iterate(&raw, &LmOptions::default()).unwrap();
    for i in 0..4 {
        assert!(crate::geometry::pose_geodesic_error(&a.poses[i], &b.poses[i]).unwrap() < 1e-8);
    }
}

#[test]
fn global_rigid_transform_leaves_relative_poses_unchanged() {
    let (_, init) = random_problem(1300, 4, 5, 4, 0.0);
    let mut moved = init.clone();
    let g = se3_exp(&Twist::from_slice(&[0.3, -0.2, 0.1, 1.0, 2.0, -0.5]));
    for p in moved.poses.iter_mut() {
        *p = p.compose(&g);
    }
    let (a, _) = lm_iterate(&init, &LmOptions::default()).unwrap();
    let (b, _) = lm_iterate(&moved, &LmOptions::default()).unwrap();
    for i in 1..4 {
        let ra = crate::geometry::relative_pose(&a.poses[0], &a.poses[i]);
        let rb = crate::geometry::relative_pose(&b.poses[0], &b.poses[i]);
        assert!(
            crate::geometry::pose_geodesic_error(&ra, &rb).unwrap() < 1e-8,
            "{}",
            crate::geometry::pose_geodesic_error(&ra, &rb).unwrap()
        );
    }
}
