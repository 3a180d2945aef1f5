//! Tight-frame decomposition of a noisy phantom, soft-thresholding of the
//! detail channels, and reconstruction.

use lact::framelet::{soft_threshold, FrameTransform};
use lact::metrics::psnr;
use lact::simulate::{make_phantom, PhantomSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> lact::Result<()> {
    let gt = make_phantom(&PhantomSpec::shepp_logan(128))?;
    let mut noisy = gt.clone();
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    noisy.as_slice_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));

    for levels in [1, 2] {
        let t = FrameTransform::new(levels)?;
        let z = t.decompose(&noisy)?;
        let energy: f64 = noisy.as_slice().iter().map(|v| v * v).sum();
        println!("{levels} level(s): {} channels, coefficient energy / image energy = {:.12}", t.n_channels(), z.norm_sq() / energy);
        for thr in [0.02, 0.05, 0.1] {
            let u = t.reconstruct(&soft_threshold(&z, &vec![thr; t.n_highpass()])?)?;
            println!("  threshold {thr:.2}: PSNR {:.2} dB (noisy input {:.2} dB)", psnr(&u, &gt, 1.0)?, psnr(&noisy, &gt, 1.0)?);
        }
    }
    Ok(())
}
