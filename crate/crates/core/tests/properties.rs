use corrdepth::geometry::{lift_all, reprojection_residual, HPoint3, Pixel2};
use corrdepth::grad::{loss_and_grad, masked_loss, LossScope};
use corrdepth::optim::{fit_depth, OptimConfig};
use corrdepth::robust::RobustParams;
use corrdepth::scene::{corrupt_tracked, CorruptionSpec, Scene, SceneSpec, SurfaceKind, ViewSpec};
use corrdepth::solver::{draw_samples, ransac_fit, ransac_with_samples, solve_lstsq, RansacConfig};
use corrdepth::{AffineCamera, CorrespondenceSet, DepthField, Error};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, k: usize) -> Vec<HPoint3> {
    (0..k)
        .map(|_| {
            HPoint3::new(
                rng.random_range(0.0..48.0),
                rng.random_range(0.0..48.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

fn random_camera(rng: &mut ChaCha8Rng) -> AffineCamera {
    let mut e = |s: f64| rng.random_range(-s..s);
    AffineCamera::from_rows([
        [1.0 + e(0.2), e(0.2), 5.0 + e(3.0), e(4.0)],
        [e(0.2), 1.0 + e(0.2), -5.0 + e(3.0), e(4.0)],
    ])
    .unwrap()
}

fn noisy_targets(rng: &mut ChaCha8Rng, cam: &AffineCamera, points: &[HPoint3], sigma: f64) -> Vec<Pixel2> {
    points
        .iter()
        .map(|p| {
            let q = cam.project(p);
            Pixel2::new(
                q.x + rng.random_range(-sigma..=sigma),
                q.y + rng.random_range(-sigma..=sigma),
            )
        })
        .collect()
}

fn sum_sq(cam: &AffineCamera, points: &[HPoint3], targets: &[Pixel2]) -> f64 {
    points
        .iter()
        .zip(targets)
        .map(|(p, t)| cam.project(p).distance(t).powi(2))
        .sum()
}

fn scene(kind: SurfaceKind, res: usize) -> Scene {
    Scene::new(&SceneSpec {
        surface_kind: kind,
        surface_params: vec![],
        resolution: (res, res),
        views: vec![
            ViewSpec::new(0.0, 0.0),
            ViewSpec::new(15.0, 5.0),
            ViewSpec::new(345.0, -8.0),
        ],
        seed: 2,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residual_matches_hand_rolled_product(
        rows in proptest::array::uniform8(-5.0f64..5.0),
        px in 0usize..6, py in 0usize..6,
        d in -1.0f64..=1.0,
        tx in -20.0f64..20.0, ty in -20.0f64..20.0,
    ) {
        let mut field = DepthField::zeros(6, 6).unwrap();
        field.set(px, py, d).unwrap();
        let cam = AffineCamera::from_rows([
            [rows[0], rows[1], rows[2], rows[3]],
            [rows[4], rows[5], rows[6], rows[7]],
        ]).unwrap();
        let x = [px as f64, py as f64, d, 1.0];
        let mut proj = [0.0; 2];
        for (r, out) in proj.iter_mut().enumerate() {
            for c in 0..4 {
                *out += rows[r * 4 + c] * x[c];
            }
        }
        let expect = ((proj[0] - tx).powi(2) + (proj[1] - ty).powi(2)).sqrt();
        let got = reprojection_residual(&cam, &Pixel2::new(px as f64, py as f64), &Pixel2::new(tx, ty), &field).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn least_squares_camera_is_optimal(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(6..60);
        let points = random_points(&mut rng, k);
        let cam = random_camera(&mut rng);
        let targets = noisy_targets(&mut rng, &cam, &points, 2.0);
        let (fit, _) = solve_lstsq(&points, &targets).unwrap();
        let best = sum_sq(&fit, &points, &targets);
        for _ in 0..100 {
            let mut e = fit.entries();
            for v in e.iter_mut() {
                *v += rng.random_range(-1e-3..1e-3);
            }
            let moved = AffineCamera::from_rows([
                [e[0], e[1], e[2], e[3]],
                [e[4], e[5], e[6], e[7]],
            ]).unwrap();
            prop_assert!(sum_sq(&moved, &points, &targets) >= best - 1e-9 * best.max(1.0));
        }
    }

    #[test]
    fn ransac_without_outliers_equals_plain_solve(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(8..80);
        let points = random_points(&mut rng, k);
        let cam = random_camera(&mut rng);
        let targets = noisy_targets(&mut rng, &cam, &points, 0.3);
        let (direct, _) = solve_lstsq(&points, &targets).unwrap();
        let out = ransac_fit(&points, &targets, &RansacConfig { seed, ..Default::default() }).unwrap();
        prop_assert!(out.inlier_mask.iter().all(|b| *b));
        prop_assert!(out.camera.max_abs_diff(&direct) <= 1e-9);
    }

    /// Replays the canonical sample stream against a permuted input.
    #[test]
    fn ransac_is_permutation_invariant(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(10..60);
        let points = random_points(&mut rng, k);
        let cam = random_camera(&mut rng);
        let mut targets = noisy_targets(&mut rng, &cam, &points, 0.4);
        for t in targets.iter_mut().take(k / 4) {
            t.x += 40.0;
        }
        let cfg = RansacConfig { seed, ..Default::default() };
        let samples = draw_samples(k, &cfg);
        let canonical = ransac_with_samples(&points, &targets, &cfg, &samples).unwrap();

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let mut position = vec![0; k];
        for (new, &old) in perm.iter().enumerate() {
            position[old] = new;
        }
        let p_points: Vec<_> = perm.iter().map(|&i| points[i]).collect();
        let p_targets: Vec<_> = perm.iter().map(|&i| targets[i]).collect();
        let p_samples: Vec<Vec<usize>> = samples
            .iter()
            .map(|s| s.iter().map(|&i| position[i]).collect())
            .collect();
        let permuted = ransac_with_samples(&p_points, &p_targets, &cfg, &p_samples).unwrap();
        prop_assert_eq!(permuted.inlier_count, canonical.inlier_count);
        prop_assert!(permuted.camera.max_abs_diff(&canonical.camera) <= 1e-9);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(permuted.inlier_mask[new], canonical.inlier_mask[old]);
        }
    }

    /// Replacing d by a d + b leaves the column space of the lifted point
    /// matrix unchanged, so the refit camera reproduces every residual.
    #[test]
    fn loss_is_invariant_under_affine_depth_change(seed in 0u64..300, a in 0.2f64..1.0, b in -0.2f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (10, 10);
        let vals: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.7..0.7)).collect();
        let depth = DepthField::from_values(w, h, vals.clone()).unwrap();
        let moved = DepthField::from_values(w, h, vals.iter().map(|v| a * v + b).collect()).unwrap();
        let src: Vec<_> = (0..40).map(|_| Pixel2::new(rng.random_range(0..w) as f64, rng.random_range(0..h) as f64)).collect();
        let tgt: Vec<_> = src.iter().map(|s| {
            let d = depth.get(s.x as usize, s.y as usize).unwrap();
            Pixel2::new(s.x + 7.0 * d + rng.random_range(-1.5..1.5), s.y - 4.0 * d + rng.random_range(-1.5..1.5))
        }).collect();
        let corr = CorrespondenceSet::new(src, tgt).unwrap();
        let support: Vec<bool> = (0..40).map(|i| i % 5 != 0).collect();
        let robust = RobustParams::new(2.0).unwrap();
        let before = masked_loss(&corr, &depth, &support, &robust, LossScope::All).unwrap();
        let after = masked_loss(&corr, &moved, &support, &robust, LossScope::All).unwrap();
        prop_assert!((before - after).abs() <= 1e-8);
    }
}

#[test]
fn ransac_separates_injected_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let points = random_points(&mut rng, 100);
    let cam = random_camera(&mut rng);
    let mut targets = noisy_targets(&mut rng, &cam, &points, 0.3);
    let cfg = RansacConfig::default();
    for t in targets.iter_mut().skip(80) {
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        t.x += 10.0 * cfg.threshold * th.cos();
        t.y += 10.0 * cfg.threshold * th.sin();
    }
    let out = ransac_fit(&points, &targets, &cfg).unwrap();
    assert!(out.inlier_mask[..80].iter().all(|b| *b));
    assert!(out.inlier_mask[80..].iter().filter(|b| **b).count() <= 2);
    let (clean, _) = solve_lstsq(&points[..80], &targets[..80]).unwrap();
    assert!(out.camera.max_abs_diff(&clean) <= 1e-4);
    assert_eq!(out.inlier_count, out.inlier_mask.iter().filter(|b| **b).count());
}

#[test]
fn generated_pairs_satisfy_affine_epipolar_constraint() {
    for kind in [SurfaceKind::Saddle, SurfaceKind::RidgeMix] {
        let s = scene(kind, 20);
        for (src, tgt) in [(0, 1), (0, 2), (1, 2)] {
            let corr = s.generate_correspondences(src, tgt, 50).unwrap();
            // a xt + b yt + c xs + d ys + e = 0, fitted as the smallest
            // right singular vector of the stacked rows.
            let rows: Vec<f64> = corr
                .source()
                .iter()
                .zip(corr.target())
                .flat_map(|(a, b)| [b.x, b.y, a.x, a.y, 1.0])
                .collect();
            let m = DMatrix::from_row_slice(corr.len(), 5, &rows);
            let svd = m.clone().svd(false, true);
            let v_t = svd.v_t.unwrap();
            let (imin, _) = svd.singular_values.argmin();
            let f = v_t.row(imin).transpose();
            let residual = (&m * f).amax();
            assert!(residual < 1e-8, "{kind:?} {src}->{tgt}: {residual:e}");
        }
    }
}

#[test]
fn corrupted_pairs_keep_their_clean_points_as_inliers() {
    let s = scene(SurfaceKind::GaussianBumps, 24);
    let clean = s.generate_correspondences(0, 1, 150).unwrap();
    let threshold = RansacConfig::default().threshold;
    let c = corrupt_tracked(
        &clean,
        &CorruptionSpec {
            gaussian_sigma: 0.0,
            outlier_fraction: 0.2,
            outlier_magnitude: 10.0 * threshold,
            seed: 11,
        },
    )
    .unwrap();
    assert_eq!(c.outliers.iter().filter(|o| **o).count(), 30);
    let gt = s.render_depth(0).unwrap();
    let (points, _) = lift_all(&c.corr, &gt).unwrap();
    let out = ransac_fit(&points, c.corr.target(), &RansacConfig::default()).unwrap();
    let clean_total = c.outliers.iter().filter(|o| !**o).count();
    let kept = c
        .outliers
        .iter()
        .zip(&out.inlier_mask)
        .filter(|(o, m)| !**o && **m)
        .count();
    assert!(kept as f64 >= 0.95 * clean_total as f64, "{kept}/{clean_total}");
}

#[test]
fn sparse_generation_sizes() {
    let s = scene(SurfaceKind::Hemisphere, 16);
    assert_eq!(s.generate_correspondences(0, 1, 50).unwrap().len(), 50);
    assert!(matches!(
        s.generate_correspondences(0, 1, 100_000),
        Err(Error::InsufficientSupport { requested: 100_000, .. })
    ));
}

#[test]
fn perturbed_depth_gradient_pushes_back() {
    let s = scene(SurfaceKind::Saddle, 20);
    let corr = s.dense_correspondences(0, 1).unwrap();
    let gt = s.render_depth(0).unwrap();
    let (x, y) = (9usize, 11usize);
    let delta = 0.03;
    let mut depth = gt.clone();
    depth.set(x, y, gt.get(x, y).unwrap() + delta).unwrap();
    let cfg = RansacConfig::default();
    let robust = RobustParams::default();
    let g = loss_and_grad(&corr, &depth, &cfg, &robust).unwrap();
    let at = |grid: &corrdepth::ScalarGrid| grid.values[grid.index(x, y)];
    let gp = at(&g.per_depth);
    assert!(gp > 0.0, "descent must lower the raised depth");
    let peak = g.per_depth.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(peak, gp.abs());

    // Finite difference of the whole pipeline; RANSAC reruns with the same seed.
    let h = 1e-5;
    let eval = |dv: f64| {
        let mut d = depth.clone();
        d.set(x, y, depth.get(x, y).unwrap() + dv).unwrap();
        loss_and_grad(&corr, &d, &cfg, &robust).unwrap().loss_value
    };
    let fd = (eval(h) - eval(-h)) / (2.0 * h);
    assert!(
        (fd - gp).abs() <= 2e-3 * fd.abs().max(gp.abs()),
        "fd {fd} analytic {gp}"
    );
}

#[test]
fn clean_fit_moving_average_is_nonincreasing() {
    let s = scene(SurfaceKind::Hemisphere, 16);
    let pairs: Vec<_> = (1..=2).map(|t| (s.dense_correspondences(0, t).unwrap(), 1.0)).collect();
    let cfg = OptimConfig {
        max_iters: 400,
        patience: usize::MAX,
        ..Default::default()
    };
    let (_, report) = fit_depth(
        &pairs,
        16,
        16,
        &cfg,
        &RansacConfig::default(),
        &RobustParams::default(),
        None,
    )
    .unwrap();
    let trace = &report.loss_trace;
    assert!(trace.len() > 50);
    let avg: Vec<f64> = trace.windows(25).map(|w| w.iter().sum::<f64>() / 25.0).collect();
    for w in avg.windows(2) {
        assert!(
            w[1] <= w[0] * (1.0 + 1e-12),
            "moving average rose: {} -> {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn tight_clamp_still_respects_bounds() {
    let s = scene(SurfaceKind::RidgeMix, 16);
    let pairs = vec![(s.generate_correspondences(0, 1, 80).unwrap(), 1.0)];
    let cfg = OptimConfig {
        grad_clamp: 1e-4,
        learning_rate: 5.0,
        max_iters: 60,
        ..Default::default()
    };
    let (d, report) = fit_depth(
        &pairs,
        16,
        16,
        &cfg,
        &RansacConfig::default(),
        &RobustParams::default(),
        None,
    )
    .unwrap();
    assert_eq!(report.loss_trace.len(), report.iterations_run);
    assert!(d.values().iter().all(|v| (-1.0..=1.0).contains(v)));
}
