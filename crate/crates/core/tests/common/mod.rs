#![allow(dead_code)]

pub mod cases;

use lact::framelet::FrameTransform;
use lact::geometry::{forward_project, Image, ScanGeometry, Sinogram};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_vec(h, w, (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_sinogram(rng: &mut ChaCha8Rng, views: usize, bins: usize) -> Sinogram {
    let mut y = Sinogram::zeros(views, bins);
    y.as_slice_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

/// Columns are the projections of the pixel basis images.
pub fn projector_matrix(g: &ScanGeometry) -> DMatrix<f64> {
    let (h, w) = g.image_size;
    let rows = g.n_views() * g.n_detectors;
    let mut m = DMatrix::zeros(rows, h * w);
    for p in 0..h * w {
        let mut e = Image::zeros(h, w);
        e.as_slice_mut()[p] = 1.0;
        let y = forward_project(&e, g).unwrap();
        m.column_mut(p).copy_from_slice(y.as_slice());
    }
    m
}

/// Rows of highpass channel `c` of the frame analysis operator.
pub fn frame_channel_matrix(t: &FrameTransform, h: usize, w: usize, c: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(h * w, h * w);
    for p in 0..h * w {
        let mut e = Image::zeros(h, w);
        e.as_slice_mut()[p] = 1.0;
        let z = t.decompose(&e).unwrap();
        let col: Vec<f64> = z.channels[c].iter().copied().collect();
        m.column_mut(p).copy_from_slice(&col);
    }
    m
}
