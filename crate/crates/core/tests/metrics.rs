mod common;

use common::*;
use lact::geometry::Image;
use lact::metrics::{data_range, evaluate, psnr};
use lact::nn::{ms_ssim, MsSsimConfig};
use proptest::prelude::*;

/// Straightforward MS-SSIM: 2-D Gaussian window applied by direct
/// summation, 2x2 mean pooling with partial edge cells.
fn reference_ms_ssim(a: &[f64], b: &[f64], h: usize, w: usize, range: f64, levels: usize) -> f64 {
    let exps = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let total: f64 = exps[..levels].iter().sum();
    let k = 11;
    let sigma: f64 = 1.5;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));

    let (mut a, mut b, mut h, mut w) = (a.to_vec(), b.to_vec(), h, w);
    let mut out = 1.0;
    for level in 0..levels {
        let (ho, wo) = (h - k + 1, w - k + 1);
        let mut cs_sum = 0.0;
        let mut ssim_sum = 0.0;
        for i in 0..ho {
            for j in 0..wo {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for p in 0..k {
                    for q in 0..k {
                        let wt = win[p * k + q];
                        let (x, y) = (a[(i + p) * w + j + q], b[(i + p) * w + j + q]);
                        ma += wt * x;
                        mb += wt * y;
                        saa += wt * x * x;
                        sbb += wt * y * y;
                        sab += wt * x * y;
                    }
                }
                let cs = (2.0 * (sab - ma * mb) + c2) / (saa - ma * ma + sbb - mb * mb + c2);
                let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                cs_sum += cs;
                ssim_sum += l * cs;
            }
        }
        let n = (ho * wo) as f64;
        let term = if level + 1 == levels { ssim_sum / n } else { cs_sum / n };
        out *= term.max(0.0).powf(exps[level] / total);
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let pool = |x: &[f64]| {
            let mut o = vec![0.0; h2 * w2];
            for i in 0..h2 {
                for j in 0..w2 {
                    let mut cells = Vec::new();
                    for di in 0..2 {
                        for dj in 0..2 {
                            if 2 * i + di < h && 2 * j + dj < w {
                                cells.push(x[(2 * i + di) * w + 2 * j + dj]);
                            }
                        }
                    }
                    o[i * w2 + j] = cells.iter().sum::<f64>() / cells.len() as f64;
                }
            }
            o
        };
        a = pool(&a);
        b = pool(&b);
        h = h2;
        w = w2;
    }
    out
}

fn smooth_pair(seed: u64, h: usize, w: usize) -> (Image, Image) {
    let base = random_image(&mut rng(seed), h, w);
    let mut a = base.clone();
    for i in 1..h {
        for j in 1..w {
            let v = 0.5 * a.data[[i - 1, j]] + 0.3 * a.data[[i, j - 1]] + 0.2 * base.data[[i, j]];
            a.data[[i, j]] = v;
        }
    }
    let noise = random_image(&mut rng(seed + 100), h, w);
    let mut b = a.clone();
    b.data.zip_mut_with(&noise.data, |x, n| *x += 0.1 * n);
    (a, b)
}

#[test]
fn ms_ssim_matches_direct_reference() {
    for (seed, h, w, levels) in [(1, 48, 52, 3), (2, 176, 180, 5), (3, 33, 40, 2), (4, 11, 15, 1)] {
        let (a, b) = smooth_pair(seed, h, w);
        let range = data_range(&a).unwrap();
        let got = ms_ssim(&a, &b, range, &MsSsimConfig::with_levels(levels)).unwrap();
        let want = reference_ms_ssim(a.as_slice(), b.as_slice(), h, w, range, levels);
        assert!((got - want).abs() < 1e-6, "{h}x{w} L{levels}: {got} vs {want}");
    }
}

#[test]
fn ms_ssim_is_symmetric_and_penalizes_inversion() {
    let (a, b) = smooth_pair(5, 64, 64);
    let cfg = MsSsimConfig::with_levels(3);
    let ab = ms_ssim(&a, &b, 1.0, &cfg).unwrap();
    let ba = ms_ssim(&b, &a, 1.0, &cfg).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    let mut inv = a.clone();
    inv.data.mapv_inplace(|v| 1.0 - v);
    assert!(ms_ssim(&a, &inv, 1.0, &cfg).unwrap() < 1.0);
    assert!((ms_ssim(&a, &a, 1.0, &cfg).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn evaluate_uses_ground_truth_range_and_fitted_levels() {
    let (gt, recon) = smooth_pair(6, 64, 64);
    let r = evaluate(&recon, &gt).unwrap();
    assert_eq!(r.ssim_levels, 3);
    assert_eq!(r.data_range, data_range(&gt).unwrap());
    assert_eq!(r.psnr_db, psnr(&recon, &gt, r.data_range).unwrap());
}

proptest! {
    #[test]
    fn psnr_scales_with_error_magnitude(k in 0.01f64..100.0, seed in 0u64..1000) {
        let a = random_image(&mut rng(seed), 9, 7);
        let e = random_image(&mut rng(seed + 1), 9, 7);
        let mut b1 = a.clone();
        b1.data.zip_mut_with(&e.data, |x, d| *x += d);
        let mut bk = a.clone();
        bk.data.zip_mut_with(&e.data, |x, d| *x += k * d);
        let p1 = psnr(&a, &b1, 1.0).unwrap();
        let pk = psnr(&a, &bk, 1.0).unwrap();
        prop_assert!((p1 - pk - 20.0 * k.log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_symmetric(seed in 0u64..1000, range in 0.1f64..10.0) {
        let a = random_image(&mut rng(seed), 6, 6);
        let b = random_image(&mut rng(seed + 7), 6, 6);
        prop_assert_eq!(psnr(&a, &b, range).unwrap(), psnr(&b, &a, range).unwrap());
    }
}
