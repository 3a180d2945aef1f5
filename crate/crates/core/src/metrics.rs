//! PSNR and MS-SSIM reporting.

use std::fmt::Write as _;

use crate::error::{dim_err, param_err, Result};
use crate::geometry::Image;
use crate::nn::ssim::{ms_ssim, MsSsimConfig};

/// Header of the metrics CSV.
pub const CSV_HEADER: &str = "run_id,method,alpha_max,psnr_db,ms_ssim,seconds";

/// `10 log10(range^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(dim_err(a.shape(), b.shape()));
    }
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(param_err("data range must be positive"));
    }
    let n = a.as_slice().len() as f64;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub data_range: f64,
    /// Number of MS-SSIM scales actually used.
    pub ssim_levels: usize,
}

impl MetricReport {
    pub fn is_identical(&self) -> bool {
        self.psnr_db.is_infinite()
    }
}

/// Range of the ground truth, rejecting constant images.
pub fn data_range(gt: &Image) -> Result<f64> {
    let (lo, hi) = gt
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let r = hi - lo;
    if !(r > 0.0) {
        return Err(param_err("ground truth is constant; data range is zero"));
    }
    Ok(r)
}

/// Both metrics with the range of `gt` and the given MS-SSIM settings.
pub fn evaluate_with(recon: &Image, gt: &Image, cfg: &MsSsimConfig) -> Result<MetricReport> {
    if recon.shape() != gt.shape() {
        return Err(dim_err(gt.shape(), recon.shape()));
    }
    let r = data_range(gt)?;
    Ok(MetricReport {
        psnr_db: psnr(recon, gt, r)?,
        ms_ssim: ms_ssim(recon, gt, r, cfg)?,
        data_range: r,
        ssim_levels: cfg.levels,
    })
}

/// Both metrics with the default five-scale MS-SSIM, lowering the number of
/// scales when the image is too small for five.
pub fn evaluate(recon: &Image, gt: &Image) -> Result<MetricReport> {
    let (h, w) = gt.shape();
    evaluate_with(recon, gt, &MsSsimConfig::default().fitted(h, w)?)
}

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub method: String,
    pub alpha_max: usize,
    pub report: MetricReport,
    pub seconds: f64,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let psnr = if self.report.psnr_db.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.6}", self.report.psnr_db)
        };
        write!(
            out,
            "{},{},{},{},{:.8},{:.3}",
            csv_field(&self.run_id),
            csv_field(&self.method),
            self.alpha_max,
            psnr,
            self.report.ms_ssim,
            self.seconds
        )
        .expect("writing to a String");
        out
    }
}
