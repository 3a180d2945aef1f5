//! FBP of the Shepp-Logan phantom from a full 180-degree scan and from the
//! first 90 degrees only.

use lact::fbp::{fbp_reconstruct, FilterKind, FilterSpec};
use lact::geometry::{forward_project, ScanGeometry, ScanMode};
use lact::metrics::evaluate;
use lact::simulate::{make_phantom, PhantomSpec};

fn main() -> lact::Result<()> {
    let size = 128;
    let gt = make_phantom(&PhantomSpec::shepp_logan(size))?;
    for views in [180, 90] {
        let g = ScanGeometry::new(ScanMode::Fan, (size, size), ScanGeometry::degree_views(views), 256)?;
        let y = forward_project(&gt, &g)?;
        for filter in [FilterSpec::default(), FilterSpec::hann(1.0)] {
            let u = fbp_reconstruct(&y, &g, &filter)?;
            let m = evaluate(&u, &gt)?;
            let name = match filter.kind {
                FilterKind::RamLak => "ram-lak",
                FilterKind::HannWindowed => "hann",
            };
            println!("{views:>3} views, {name:<7}: PSNR {:6.2} dB, MS-SSIM {:.4}", m.psnr_db, m.ms_ssim);
        }
    }
    Ok(())
}
