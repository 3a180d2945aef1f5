//! HQS-CG against FBP on the noiseless Shepp-Logan phantom, for several
//! measured angular ranges.

use std::time::Instant;

use lact::fbp::{fbp_reconstruct, FilterSpec};
use lact::geometry::{forward_project, LimitedAngleSetup, ScanMode};
use lact::hqs::{hqs_cg_run, HqsConfig};
use lact::metrics::evaluate;
use lact::simulate::{make_phantom, PhantomSpec};

fn main() -> lact::Result<()> {
    let size = 128;
    let gt = make_phantom(&PhantomSpec::shepp_logan(size))?;
    let cfg = HqsConfig::default();
    for alpha in [30, 60, 90] {
        let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (size, size), 256, alpha, 15, 15)?;
        let y = forward_project(&gt, &setup.measured)?;
        let fbp = fbp_reconstruct(&y, &setup.measured, &FilterSpec::default())?;
        let t = Instant::now();
        let (u, state) = hqs_cg_run(&y, &setup, &cfg, None)?;
        let secs = t.elapsed().as_secs_f64();
        let (mf, mh) = (evaluate(&fbp, &gt)?, evaluate(&u, &gt)?);
        println!(
            "alpha_max {alpha:>2}: FBP {:6.2} dB | HQS-CG {:6.2} dB in {secs:.1}s, CG iterations {:?}",
            mf.psnr_db, mh.psnr_db, state.cg_iters
        );
    }
    Ok(())
}
