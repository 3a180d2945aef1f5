//! Ramp filtering, filtered backprojection and the Radon inversion layer.
//!
//! Filtering is a zero-padded linear convolution with the periodized discrete
//! ramp kernel of period `L = 2 * n_detectors`. The kernel is symmetric, so the
//! filter is self-adjoint. Its DFT is exactly `|w|` (optionally windowed) at the
//! padded frequencies, in particular zero at DC.
//!
//! The backprojection is pixel driven with linear interpolation between
//! detector bins; fan mode uses the flat-detector weighting (cosine pre-weight
//! on the virtual detector and `1/U^2` in the backprojection).

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{dim_err, param_err, Error, Result};
use crate::geometry::{Image, ScanGeometry, ScanMode, Sinogram};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    RamLak,
    HannWindowed,
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ram-lak" => Ok(FilterKind::RamLak),
            "hann" | "hann-windowed" => Ok(FilterKind::HannWindowed),
            other => Err(param_err(format!("unknown filter `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Fraction of the Nyquist frequency, in (0, 1].
    pub cutoff: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            kind: FilterKind::RamLak,
            cutoff: 1.0,
        }
    }
}

impl FilterSpec {
    pub fn hann(cutoff: f64) -> Self {
        FilterSpec {
            kind: FilterKind::HannWindowed,
            cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(param_err(format!("filter cutoff {} not in (0, 1]", self.cutoff)));
        }
        Ok(())
    }

    /// Frequency response at DFT index `k` of a length-`period` transform
    /// with sample spacing `tau`.
    pub fn response(&self, k: usize, period: usize, tau: f64) -> f64 {
        let kk = k.min(period - k) as f64;
        let omega = kk / (period as f64 * tau);
        let nyquist = 0.5 / tau;
        let edge = self.cutoff * nyquist;
        if omega > edge * (1.0 + 1e-12) {
            return 0.0;
        }
        match self.kind {
            FilterKind::RamLak => omega,
            FilterKind::HannWindowed => omega * 0.5 * (1.0 + (PI * omega / edge).cos()),
        }
    }
}

/// Spatial taps of the periodic filter: `taps[n]` for `n` in `0..period`.
pub fn periodic_kernel(spec: &FilterSpec, period: usize, tau: f64) -> Vec<f64> {
    if spec.kind == FilterKind::RamLak && spec.cutoff == 1.0 && period.is_multiple_of(2) {
        return ramlak_closed_form(period, tau);
    }
    let resp: Vec<f64> = (0..period).map(|k| spec.response(k, period, tau)).collect();
    let l = period as f64;
    (0..period)
        .map(|n| {
            let mut acc = 0.0;
            for (k, &r) in resp.iter().enumerate() {
                if r != 0.0 {
                    acc += r * (2.0 * PI * ((k * n) % period) as f64 / l).cos();
                }
            }
            acc / l
        })
        .collect()
}

/// Periodized Ram-Lak taps (even `period`): `1/(4 tau)` at zero,
/// `-1 / (L^2 tau sin^2(pi n / L))` at odd `n`, zero at even `n`.
fn ramlak_closed_form(period: usize, tau: f64) -> Vec<f64> {
    let l = period as f64;
    (0..period)
        .map(|n| {
            if n == 0 {
                0.25 / tau
            } else if n % 2 == 1 {
                let s = (PI * n as f64 / l).sin();
                -1.0 / (l * l * tau * s * s)
            } else {
                0.0
            }
        })
        .collect()
}

/// Circular convolution of `row` (period `taps.len()`) with `taps`.
pub fn filter_row_periodic(row: &[f64], taps: &[f64]) -> Vec<f64> {
    let l = taps.len();
    assert_eq!(row.len(), l, "row length must equal the kernel period");
    (0..l)
        .map(|n| {
            row.iter()
                .enumerate()
                .map(|(m, &x)| taps[(n + l - m) % l] * x)
                .sum()
        })
        .collect()
}

/// Linear kernel `lin[d + n - 1] = taps[d mod L]` for lags `|d| < n`.
fn linear_kernel(taps: &[f64], n: usize) -> Vec<f64> {
    let l = taps.len();
    debug_assert!(l + 1 >= 2 * n, "period too short for zero padding");
    (0..2 * n - 1)
        .map(|k| taps[(k + l + 1 - n) % l])
        .collect()
}

/// Zero-padded linear convolution of `row` with a lag kernel from
/// [`linear_kernel`].
fn filter_row_padded(row: &[f64], lin: &[f64], out: &mut [f64]) {
    let n = row.len();
    for (i, o) in out.iter_mut().enumerate() {
        // lag i - m, offset by n - 1
        let k = &lin[i..i + n];
        let mut acc = 0.0;
        for (m, &x) in row.iter().enumerate() {
            acc += k[n - 1 - m] * x;
        }
        *o = acc;
    }
}

fn filter_spacing(g: &ScanGeometry) -> f64 {
    match g.mode {
        ScanMode::Parallel => g.detector_spacing,
        ScanMode::Fan => g.detector_spacing * g.source_to_center / g.source_to_detector,
    }
}

/// Per-view ramp filtering (linear, self-adjoint).
pub fn filter_sinogram(y: &Sinogram, f: &FilterSpec, tau: f64) -> Result<Sinogram> {
    f.validate()?;
    let nd = y.n_detectors();
    if nd < 2 {
        return Err(param_err("filtering needs at least two detector bins"));
    }
    let taps = periodic_kernel(f, 2 * nd, tau);
    Ok(apply_row_filter(y, &taps))
}

fn apply_row_filter(y: &Sinogram, taps: &[f64]) -> Sinogram {
    let nd = y.n_detectors();
    let mut out = Sinogram::zeros(y.n_views(), nd);
    if nd == 0 || y.n_views() == 0 {
        return out;
    }
    let lin = linear_kernel(taps, nd);
    out.as_slice_mut()
        .par_chunks_mut(nd)
        .zip(y.as_slice().par_chunks(nd))
        .for_each(|(o, r)| filter_row_padded(r, &lin, o));
    out
}

/// Filtered backprojection as a fixed linear operator with its transpose.
///
/// This is the Radon inversion layer: [`Fbp::apply`] reconstructs and
/// [`Fbp::adjoint`] backpropagates image-domain gradients to the sinogram.
#[derive(Clone, Debug)]
pub struct Fbp {
    geometry: ScanGeometry,
    filter: FilterSpec,
    taps: Vec<f64>,
    pre_weights: Vec<f64>,
    view_weight: f64,
    trig: Vec<(f64, f64)>,
}

impl Fbp {
    pub fn new(geometry: ScanGeometry, filter: FilterSpec) -> Result<Self> {
        geometry.validate()?;
        filter.validate()?;
        let nd = geometry.n_detectors;
        if nd < 2 {
            return Err(param_err("FBP needs at least two detector bins"));
        }
        let tau = filter_spacing(&geometry);
        let taps = periodic_kernel(&filter, 2 * nd, tau);
        let pre_weights = match geometry.mode {
            ScanMode::Parallel => vec![1.0; nd],
            ScanMode::Fan => {
                let dso = geometry.source_to_center;
                let mag = dso / geometry.source_to_detector;
                (0..nd)
                    .map(|b| {
                        let s = geometry.detector_offset(b) * mag;
                        dso / (dso * dso + s * s).sqrt()
                    })
                    .collect()
            }
        };
        // Redundancy: a full 2*pi scan sees each ray twice.
        let range = geometry.angular_range_rad();
        let view_weight = geometry.angle_step_rad() * PI / range.max(PI);
        let trig = geometry
            .angles_deg
            .iter()
            .map(|a| a.to_radians().sin_cos())
            .collect();
        Ok(Fbp {
            geometry,
            filter,
            taps,
            pre_weights,
            view_weight,
            trig,
        })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn filter(&self) -> &FilterSpec {
        &self.filter
    }

    /// Detector coordinate (fractional bin) and backprojection weight of the
    /// pixel at `(x, y)` in view `v`.
    #[inline]
    fn pixel_bin(&self, v: usize, x: f64, y: f64) -> (f64, f64) {
        let g = &self.geometry;
        let (s, c) = self.trig[v];
        let lat = x * c + y * s;
        let half = 0.5 * (g.n_detectors as f64 - 1.0);
        match g.mode {
            ScanMode::Parallel => (lat / g.detector_spacing + half, 1.0),
            ScanMode::Fan => {
                let dso = g.source_to_center;
                let t = -x * s + y * c + dso;
                let u = g.source_to_detector * lat / t;
                let k = dso / t;
                (u / g.detector_spacing + half, k * k)
            }
        }
    }

    fn pixel_centers(&self) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = self.geometry.image_size;
        let ps = self.geometry.pixel_spacing;
        let xs = (0..w).map(|j| (j as f64 - 0.5 * (w as f64 - 1.0)) * ps).collect();
        let ys = (0..h).map(|i| (0.5 * (h as f64 - 1.0) - i as f64) * ps).collect();
        (xs, ys)
    }

    fn backproject(&self, q: &Sinogram) -> Image {
        let (h, w) = self.geometry.image_size;
        let nd = self.geometry.n_detectors;
        let nv = self.geometry.n_views();
        let (xs, ys) = self.pixel_centers();
        let qs = q.as_slice();
        let mut out = Image::zeros(h, w);
        out.as_slice_mut()
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(i, row)| {
                let y = ys[i];
                for (j, px) in row.iter_mut().enumerate() {
                    let x = xs[j];
                    let mut acc = 0.0;
                    for v in 0..nv {
                        let (b, wgt) = self.pixel_bin(v, x, y);
                        let b0 = b.floor();
                        let f = b - b0;
                        let b0 = b0 as isize;
                        let line = &qs[v * nd..(v + 1) * nd];
                        let mut val = 0.0;
                        if b0 >= 0 && (b0 as usize) < nd {
                            val += (1.0 - f) * line[b0 as usize];
                        }
                        if b0 + 1 >= 0 && ((b0 + 1) as usize) < nd {
                            val += f * line[(b0 + 1) as usize];
                        }
                        acc += wgt * val;
                    }
                    *px = acc * self.view_weight;
                }
            });
        out
    }

    fn backproject_adjoint(&self, img: &Image) -> Sinogram {
        let (h, w) = self.geometry.image_size;
        let nd = self.geometry.n_detectors;
        let nv = self.geometry.n_views();
        let (xs, ys) = self.pixel_centers();
        let src = img.as_slice();
        let mut out = Sinogram::zeros(nv, nd);
        out.as_slice_mut()
            .par_chunks_mut(nd)
            .enumerate()
            .for_each(|(v, line)| {
                for i in 0..h {
                    for j in 0..w {
                        let g = src[i * w + j] * self.view_weight;
                        if g == 0.0 {
                            continue;
                        }
                        let (b, wgt) = self.pixel_bin(v, xs[j], ys[i]);
                        let b0 = b.floor();
                        let f = b - b0;
                        let b0 = b0 as isize;
                        if b0 >= 0 && (b0 as usize) < nd {
                            line[b0 as usize] += wgt * (1.0 - f) * g;
                        }
                        if b0 + 1 >= 0 && ((b0 + 1) as usize) < nd {
                            line[(b0 + 1) as usize] += wgt * f * g;
                        }
                    }
                }
            });
        out
    }

    fn check_sinogram(&self, y: &Sinogram) -> Result<()> {
        y.check_geometry(&self.geometry)
    }

    /// Filtered backprojection of `y`.
    pub fn apply(&self, y: &Sinogram) -> Result<Image> {
        self.check_sinogram(y)?;
        let mut weighted = y.clone();
        for mut row in weighted.data.rows_mut() {
            for (v, w) in row.iter_mut().zip(&self.pre_weights) {
                *v *= w;
            }
        }
        let q = apply_row_filter(&weighted, &self.taps);
        Ok(self.backproject(&q))
    }

    /// Exact transpose of [`Fbp::apply`].
    pub fn adjoint(&self, grad_u: &Image) -> Result<Sinogram> {
        if grad_u.shape() != self.geometry.image_size {
            return Err(dim_err(self.geometry.image_size, grad_u.shape()));
        }
        let q = self.backproject_adjoint(grad_u);
        let mut out = apply_row_filter(&q, &self.taps);
        for mut row in out.data.rows_mut() {
            for (v, w) in row.iter_mut().zip(&self.pre_weights) {
                *v *= w;
            }
        }
        Ok(out)
    }
}

pub fn fbp_reconstruct(y: &Sinogram, g: &ScanGeometry, f: &FilterSpec) -> Result<Image> {
    Fbp::new(g.clone(), *f)?.apply(y)
}

/// Radon inversion layer forward pass; identical to [`fbp_reconstruct`].
pub fn ril_apply(y: &Sinogram, g: &ScanGeometry, f: &FilterSpec) -> Result<Image> {
    fbp_reconstruct(y, g, f)
}

/// Radon inversion layer backward pass.
pub fn ril_adjoint(grad_u: &Image, g: &ScanGeometry, f: &FilterSpec) -> Result<Sinogram> {
    Fbp::new(g.clone(), *f)?.adjoint(grad_u)
}
