//! PSNR and MS-SSIM of progressively degraded phantoms, written as metric
//! CSV rows.

use lact::metrics::{evaluate, MetricRow, CSV_HEADER};
use lact::simulate::{make_phantom, PhantomSpec};

fn main() -> lact::Result<()> {
    let gt = make_phantom(&PhantomSpec::shepp_logan(256))?;
    println!("{CSV_HEADER}");
    for (k, offset) in [0.0, 0.01, 0.05, 0.1].into_iter().enumerate() {
        let mut u = gt.clone();
        // Alternate the sign so the error is not a pure intensity shift.
        u.as_slice_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += if i % 2 == 0 { offset } else { -offset });
        let row = MetricRow {
            run_id: format!("degrade-{k}"),
            method: "checkerboard".into(),
            alpha_max: 180,
            report: evaluate(&u, &gt)?,
            seconds: 0.0,
        };
        println!("{}", row.to_csv());
    }
    Ok(())
}
