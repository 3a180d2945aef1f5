use lact::geometry::{LimitedAngleSetup, ScanMode};
use lact::simulate::{add_noise_stream, make_dataset, make_phantom_item, NoiseModel, PhantomSpec};
use lact::Sinogram;

#[test]
fn gaussian_noise_std_tracks_mean_magnitude() {
    let n = 250 * 400;
    let vals: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.5 } else { -0.5 }).collect();
    let y = Sinogram::from_array(ndarray::Array2::from_shape_vec((250, 400), vals).unwrap()).unwrap();
    let nm = NoiseModel {
        gaussian_frac: 0.05,
        poisson_i0: f64::INFINITY,
        seed: 11,
    };
    let noisy = add_noise_stream(&y, &nm, 0).unwrap();
    let d: Vec<f64> = noisy.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let want = 0.05 * 1.0;
    assert!((std - want).abs() < 0.05 * want, "std {std}");
    assert!(mean.abs() < 3.0 * want / (n as f64).sqrt() * 2.0);
}

#[test]
fn huge_photon_count_is_nearly_noiseless() {
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (64, 64), 96, 90, 15, 15).unwrap();
    let setup = LimitedAngleSetup::new(setup.extended.with_pixel_spacing(1.0 / 64.0).unwrap(), setup.selector).unwrap();
    let spec = PhantomSpec::random_ellipses(64, 1, 3);
    let clean = make_dataset(1, &spec, &setup, &NoiseModel::noiseless()).unwrap();
    let nm = NoiseModel {
        gaussian_frac: 0.0,
        poisson_i0: 1e12,
        seed: 5,
    };
    let noisy = make_dataset(1, &spec, &setup, &nm).unwrap();
    let a = clean[0].y_measured.as_slice();
    let b = noisy[0].y_measured.as_slice();
    let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "max deviation {worst}");
    assert_eq!(noisy[0].y_gt_extended, clean[0].y_gt_extended);
}

#[test]
fn noise_and_phantoms_are_seeded() {
    let y = Sinogram::from_array(ndarray::Array2::from_elem((20, 30), 0.7)).unwrap();
    let nm = NoiseModel { seed: 9, ..NoiseModel::default() };
    assert_eq!(add_noise_stream(&y, &nm, 2).unwrap(), add_noise_stream(&y, &nm, 2).unwrap());
    assert_ne!(add_noise_stream(&y, &nm, 2).unwrap(), add_noise_stream(&y, &nm, 3).unwrap());
    let spec = PhantomSpec::random_ellipses(64, 4, 21);
    assert_eq!(make_phantom_item(&spec, 1).unwrap(), make_phantom_item(&spec, 1).unwrap());
    assert_ne!(make_phantom_item(&spec, 1).unwrap(), make_phantom_item(&spec, 2).unwrap());
}

#[test]
fn intensity_shift_is_a_uniform_offset() {
    let base = PhantomSpec::random_ellipses(64, 1, 4);
    let shifted = PhantomSpec {
        intensity_shift: 0.1,
        ..base.clone()
    };
    let a = make_phantom_item(&base, 0).unwrap();
    let b = make_phantom_item(&shifted, 0).unwrap();
    let diffs: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| y - x).collect();
    assert!(diffs.iter().all(|d| (d - 0.1).abs() < 1e-12));
}
