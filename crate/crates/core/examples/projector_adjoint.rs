//! Forward-projects the Shepp-Logan phantom in both scan modes and runs the
//! dot-product test against the backprojector.

use lact::geometry::{back_project, forward_project, Image, ScanGeometry, ScanMode, Sinogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> lact::Result<()> {
    let phantom = lact::simulate::make_phantom(&lact::simulate::PhantomSpec::shepp_logan(64))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in [ScanMode::Parallel, ScanMode::Fan] {
        let g = ScanGeometry::new(mode, (64, 64), ScanGeometry::degree_views(90), 96)?;
        let y = forward_project(&phantom, &g)?;
        let peak = y.as_slice().iter().cloned().fold(0.0, f64::max);
        println!("{mode}: sinogram {:?}, peak line integral {peak:.3}", y.shape());

        let u = Image::from_vec(64, 64, (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let mut r = Sinogram::zeros(90, 96);
        r.as_slice_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let au = forward_project(&u, &g)?;
        let atr = back_project(&r, &g)?;
        let lhs = inner(au.as_slice(), r.as_slice());
        let rhs = inner(u.as_slice(), atr.as_slice());
        let scale = inner(au.as_slice(), au.as_slice()).sqrt() * inner(r.as_slice(), r.as_slice()).sqrt();
        println!("{mode}: <Au,r> = {lhs:.9e}, <u,A^T r> = {rhs:.9e}, relative gap {:.2e}", (lhs - rhs).abs() / scale);
    }
    Ok(())
}
