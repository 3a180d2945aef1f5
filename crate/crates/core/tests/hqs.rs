mod common;

use common::*;
use lact::framelet::FrameCoeffs;
use lact::geometry::{back_project, forward_project, Image, LimitedAngleSetup, ScanMode, Sinogram};
use lact::hqs::{cg_solve, hqs_cg_run, u_update, y_tilde_update, z_update, HqsConfig, HqsProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn y_tilde_matches_dense_least_squares() {
    // 5 extended views of 7 bins, views 1..=3 measured.
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (6, 6), 7, 3, 1, 1).unwrap();
    let mut r = rng(100);
    let u = random_image(&mut r, 6, 6);
    let y = random_sinogram(&mut r, 3, 7);
    let (b1, b2) = (0.7, 0.3);
    let got = y_tilde_update(&y, &u, &setup.selector, &setup.extended, b1, b2).unwrap();

    // minimize b1 |P x - y|^2 + b2 |At u - x|^2 over x via its normal equations.
    let n = 5 * 7;
    let mut p = DMatrix::<f64>::zeros(3 * 7, n);
    for (r_i, &v) in setup.selector.measured_indices().iter().enumerate() {
        for b in 0..7 {
            p[(r_i * 7 + b, v * 7 + b)] = 1.0;
        }
    }
    let at_u = DVector::from_column_slice(forward_project(&u, &setup.extended).unwrap().as_slice());
    let yv = DVector::from_column_slice(y.as_slice());
    let lhs = p.transpose() * &p * b1 + DMatrix::identity(n, n) * b2;
    let rhs = p.transpose() * yv * b1 + at_u * b2;
    let want = lhs.lu().solve(&rhs).unwrap();
    assert!(max_abs_diff(got.as_slice(), want.as_slice()) < 1e-8);
}

#[test]
fn u_update_matches_dense_solve() {
    // 8x8 image, 10 extended views (6 measured).
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (8, 8), 12, 6, 2, 2).unwrap();
    let gamma: Vec<f64> = (0..8).map(|i| 0.5 + 0.25 * i as f64).collect();
    let cfg = HqsConfig {
        gamma: gamma.clone(),
        beta2: 0.3,
        cg_max_iters: 1000,
        cg_tol: 1e-13,
        ..HqsConfig::default()
    };
    let t = cfg.frame();
    let mut r = rng(101);
    let y = random_sinogram(&mut r, 6, 12);
    let y_tilde = random_sinogram(&mut r, 10, 12);
    let mut z = FrameCoeffs::zeros(&t, (8, 8));
    for c in z.channels.iter_mut() {
        c.mapv_inplace(|_| r.random_range(-1.0..1.0));
    }
    let got = u_update(&y, &y_tilde, &z, &setup, &cfg, &Image::zeros(8, 8)).unwrap();

    let a_ext = projector_matrix(&setup.extended);
    let a = projector_matrix(&setup.measured);
    let mut m = a.transpose() * &a + a_ext.transpose() * &a_ext * (2.0 * cfg.beta2);
    let mut rhs = a.transpose() * DVector::from_column_slice(y.as_slice())
        + a_ext.transpose() * DVector::from_column_slice(y_tilde.as_slice()) * (2.0 * cfg.beta2);
    for (i, g) in gamma.iter().enumerate() {
        let wi = frame_channel_matrix(&t, 8, 8, i + 1);
        m += wi.transpose() * &wi * *g;
        let zi: Vec<f64> = z.channels[i + 1].iter().copied().collect();
        rhs += wi.transpose() * DVector::from_vec(zi) * *g;
    }
    let want = m.cholesky().expect("system is positive definite").solve(&rhs);
    let err = max_abs_diff(got.x.as_slice(), want.as_slice()) / want.amax();
    assert!(err < 1e-5, "relative error {err}");

    // The returned iterate reproduces the right-hand side within the tolerance.
    let problem = HqsProblem::new(setup, cfg.clone()).unwrap();
    let b = problem.rhs(&y, &y_tilde, &z).unwrap();
    let res: Vec<f64> = problem
        .system_apply(&got.x)
        .unwrap()
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| p - q)
        .collect();
    assert!(norm(&res) <= cfg.cg_tol * norm(b.as_slice()) * 1.0001);
}

#[test]
fn system_operator_is_symmetric_positive() {
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (16, 16), 24, 30, 5, 5).unwrap();
    let p = HqsProblem::new(setup, HqsConfig::default()).unwrap();
    let mut r = rng(102);
    for _ in 0..5 {
        let (a, b) = (random_image(&mut r, 16, 16), random_image(&mut r, 16, 16));
        let (oa, ob) = (p.system_apply(&a).unwrap(), p.system_apply(&b).unwrap());
        let (l, rr) = (dot(oa.as_slice(), b.as_slice()), dot(a.as_slice(), ob.as_slice()));
        assert!(rel_err(l, rr, 1e-12) < 1e-8);
        assert!(dot(oa.as_slice(), a.as_slice()) > 0.0);
    }
}

#[test]
fn without_penalties_the_operator_is_the_normal_matrix() {
    let setup = LimitedAngleSetup::one_degree(ScanMode::Parallel, (16, 16), 24, 20, 4, 4).unwrap();
    let cfg = HqsConfig {
        lambda: 0.0,
        gamma: vec![0.0],
        beta2: 0.0,
        ..HqsConfig::default()
    };
    let p = HqsProblem::new(setup.clone(), cfg).unwrap();
    let mut r = rng(103);
    let v = random_image(&mut r, 16, 16);
    let want = back_project(&forward_project(&v, &setup.measured).unwrap(), &setup.measured).unwrap();
    let got = p.system_apply(&v).unwrap();
    assert!(max_abs_diff(got.as_slice(), want.as_slice()) < 1e-10 * norm(want.as_slice()));
}

#[test]
fn z_update_matches_scalar_grid_search() {
    let mut r = rng(104);
    let u = random_image(&mut r, 10, 10);
    let cfg = HqsConfig {
        lambda: 0.05,
        gamma: vec![0.5, 1.0, 2.0, 4.0, 0.25, 1.5, 3.0, 0.75],
        ..HqsConfig::default()
    };
    let t = cfg.frame();
    let wu = t.decompose(&u).unwrap();
    let z = z_update(&u, &t, &cfg).unwrap();
    for _ in 0..60 {
        let c = r.random_range(1..=8);
        let (i, j) = (r.random_range(0..10), r.random_range(0..10));
        let x = wu.channels[c][[i, j]];
        let g = cfg.gamma[c - 1];
        // lambda |v| + gamma/2 (v - x)^2 on a grid of step 1e-6 around x.
        let f = |v: f64| cfg.lambda * v.abs() + 0.5 * g * (v - x).powi(2);
        let best = (-400_000..=400_000)
            .map(|k| x + k as f64 * 1e-6)
            .chain([0.0])
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        assert!((z.channels[c][[i, j]] - best).abs() <= 1e-6, "channel {c}");
    }
    assert_eq!(z.channels[0], wu.channels[0]);
}

#[test]
fn objective_descends_with_exact_inner_solves() {
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (16, 16), 24, 40, 10, 10).unwrap();
    let gt = lact::simulate::rasterize(&lact::simulate::shepp_logan_ellipses(16), 16);
    let y = forward_project(&gt, &setup.measured).unwrap();
    for cfg in [
        HqsConfig {
            outer_iters: 8,
            cg_max_iters: 2000,
            cg_tol: 1e-10,
            lambda: 0.05,
            ..HqsConfig::default()
        },
        HqsConfig {
            outer_iters: 8,
            cg_max_iters: 2000,
            cg_tol: 1e-10,
            lambda: 0.0,
            beta2: 0.0,
            ..HqsConfig::default()
        },
    ] {
        let (_, state) = hqs_cg_run(&y, &setup, &cfg, None).unwrap();
        let h = &state.objective_history;
        assert_eq!(h.len(), cfg.outer_iters + 1);
        for k in 1..h.len() {
            assert!(h[k] <= h[k - 1] + 1e-6, "step {k}: {} -> {}", h[k - 1], h[k]);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (24, 24), 32, 30, 5, 5).unwrap();
    let mut r = rng(105);
    let y = random_sinogram(&mut r, 30, 32);
    let cfg = HqsConfig::default();
    let (a, sa) = hqs_cg_run(&y, &setup, &cfg, None).unwrap();
    let (b, sb) = hqs_cg_run(&y, &setup, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.objective_history, sb.objective_history);
    assert_eq!(sa.y_tilde.shape(), (40, 32));
}

#[test]
fn cg_solves_dense_spd_system_in_n_steps() {
    let mut r = rng(106);
    let b = DMatrix::<f64>::from_fn(8, 8, |_, _| r.random_range(-1.0..1.0));
    let m = &b * b.transpose() + DMatrix::identity(8, 8) * 0.5;
    let rhs_v = DVector::<f64>::from_fn(8, |_, _| r.random_range(-1.0..1.0));
    let want = m.clone().cholesky().unwrap().solve(&rhs_v);
    let apply = |x: &Image| {
        let v = &m * DVector::from_column_slice(x.as_slice());
        Image::from_vec(2, 4, v.as_slice().to_vec())
    };
    let rhs = Image::from_vec(2, 4, rhs_v.as_slice().to_vec()).unwrap();
    let out = cg_solve(apply, &rhs, &Image::zeros(2, 4), 8, 1e-10).unwrap();
    assert!(out.iters <= 8);
    assert!(out.residual < 1e-10);
    assert!(max_abs_diff(out.x.as_slice(), want.as_slice()) < 1e-8);
}

#[test]
fn measured_sinogram_geometry_is_checked() {
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (16, 16), 24, 30, 5, 5).unwrap();
    let wrong = Sinogram::zeros(40, 24);
    assert!(hqs_cg_run(&wrong, &setup, &HqsConfig::default(), None).is_err());
}
