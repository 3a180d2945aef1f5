//! Scan geometry, the Joseph-style projector and the view-selection operator.
//!
//! Coordinates are physical (units of `pixel_spacing`), x to the right and y
//! up, with the origin at the image center. Pixel `(i, j)` has its center at
//! `x = (j - (W-1)/2) * ps`, `y = ((H-1)/2 - i) * ps`.
//!
//! For a view at angle `theta` the parallel rays travel along
//! `d = (-sin theta, cos theta)` and are offset along `n = (cos theta, sin theta)`.
//! In fan mode the source sits at `-source_to_center * d` and a flat detector
//! perpendicular to `d` is placed `source_to_detector` away from the source.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{dim_err, param_err, Error, Result};

/// Number of partial images used when scattering views in the adjoint.
/// Fixed so the summation order does not depend on the thread count.
const ADJOINT_CHUNKS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    Parallel,
    Fan,
}

impl std::str::FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(ScanMode::Parallel),
            "fan" => Ok(ScanMode::Fan),
            other => Err(param_err(format!("unknown scan mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScanMode::Parallel => "parallel",
            ScanMode::Fan => "fan",
        })
    }
}

/// Acquisition description shared by the projector, FBP and the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub mode: ScanMode,
    pub angles_deg: Vec<f64>,
    pub n_detectors: usize,
    pub detector_spacing: f64,
    /// Fan mode only.
    pub source_to_center: f64,
    /// Fan mode only.
    pub source_to_detector: f64,
    /// `(H, W)` in pixels.
    pub image_size: (usize, usize),
    pub pixel_spacing: f64,
}

/// Detector oversizing relative to the exact object shadow.
const DETECTOR_MARGIN: f64 = 1.05;

impl ScanGeometry {
    /// Builds a geometry with default distances and a detector spacing that
    /// covers the image diagonal in every view.
    pub fn new(
        mode: ScanMode,
        image_size: (usize, usize),
        angles_deg: Vec<f64>,
        n_detectors: usize,
    ) -> Result<Self> {
        let diag = Self::diagonal(image_size, 1.0);
        let mut g = ScanGeometry {
            mode,
            angles_deg,
            n_detectors,
            detector_spacing: 1.0,
            source_to_center: 2.0 * diag,
            source_to_detector: 4.0 * diag,
            image_size,
            pixel_spacing: 1.0,
        };
        g.detector_spacing = g.default_detector_spacing();
        g.validate()?;
        Ok(g)
    }

    pub fn parallel(image_size: (usize, usize), angles_deg: Vec<f64>, n_detectors: usize) -> Result<Self> {
        Self::new(ScanMode::Parallel, image_size, angles_deg, n_detectors)
    }

    pub fn fan(image_size: (usize, usize), angles_deg: Vec<f64>, n_detectors: usize) -> Result<Self> {
        Self::new(ScanMode::Fan, image_size, angles_deg, n_detectors)
    }

    /// Overrides the fan distances and recomputes the default detector spacing.
    pub fn with_distances(mut self, source_to_center: f64, source_to_detector: f64) -> Result<Self> {
        self.source_to_center = source_to_center;
        self.source_to_detector = source_to_detector;
        self.detector_spacing = self.default_detector_spacing();
        self.validate()?;
        Ok(self)
    }

    pub fn with_detector_spacing(mut self, spacing: f64) -> Result<Self> {
        self.detector_spacing = spacing;
        self.validate()?;
        Ok(self)
    }

    /// Changes the pixel pitch, scaling distances and spacing with it.
    pub fn with_pixel_spacing(mut self, spacing: f64) -> Result<Self> {
        let k = spacing / self.pixel_spacing;
        self.pixel_spacing = spacing;
        self.source_to_center *= k;
        self.source_to_detector *= k;
        self.detector_spacing *= k;
        self.validate()?;
        Ok(self)
    }

    fn diagonal(image_size: (usize, usize), ps: f64) -> f64 {
        let (h, w) = image_size;
        ps * ((h * h + w * w) as f64).sqrt()
    }

    fn default_detector_spacing(&self) -> f64 {
        let diag = Self::diagonal(self.image_size, self.pixel_spacing);
        let n = self.n_detectors.max(1) as f64;
        match self.mode {
            ScanMode::Parallel => DETECTOR_MARGIN * diag / n,
            ScanMode::Fan => {
                let radius = 0.5 * diag;
                let ratio = (radius / self.source_to_center).min(0.99);
                let half_width = self.source_to_detector * ratio.asin().tan();
                DETECTOR_MARGIN * 2.0 * half_width / n
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_detectors == 0 {
            return Err(param_err("n_detectors must be at least 1"));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(param_err("image size must be non-zero"));
        }
        if !(self.pixel_spacing > 0.0 && self.pixel_spacing.is_finite()) {
            return Err(param_err("pixel_spacing must be positive"));
        }
        if !(self.detector_spacing > 0.0 && self.detector_spacing.is_finite()) {
            return Err(param_err("detector_spacing must be positive"));
        }
        if self.angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(param_err("angles must be finite"));
        }
        if self.angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param_err("angles must be strictly increasing"));
        }
        if self.mode == ScanMode::Fan
            && !(self.source_to_detector > self.source_to_center && self.source_to_center > 0.0)
        {
            return Err(param_err(
                "fan mode requires source_to_detector > source_to_center > 0",
            ));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_views(), self.n_detectors)
    }

    /// Mean angular increment in radians (1 degree for a single view).
    pub fn angle_step_rad(&self) -> f64 {
        let n = self.n_views();
        if n < 2 {
            return 1f64.to_radians();
        }
        (self.angles_deg[n - 1] - self.angles_deg[0]).to_radians() / (n - 1) as f64
    }

    /// Angular range covered by the views, counting one step per view.
    pub fn angular_range_rad(&self) -> f64 {
        self.angle_step_rad() * self.n_views() as f64
    }

    /// Detector bin center offset from the central bin.
    pub fn detector_offset(&self, bin: usize) -> f64 {
        (bin as f64 - 0.5 * (self.n_detectors as f64 - 1.0)) * self.detector_spacing
    }

    /// Geometry restricted to a subset of views.
    pub fn subset(&self, indices: &[usize]) -> Result<ScanGeometry> {
        let mut g = self.clone();
        g.angles_deg = indices
            .iter()
            .map(|&i| {
                self.angles_deg
                    .get(i)
                    .copied()
                    .ok_or_else(|| param_err(format!("view index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        g.validate()?;
        Ok(g)
    }

    /// The ray hitting detector `bin` in view `view`.
    pub fn ray(&self, view: usize, bin: usize) -> Ray {
        let theta = self.angles_deg[view].to_radians();
        let (s, c) = theta.sin_cos();
        let n = [c, s];
        let d = [-s, c];
        let u = self.detector_offset(bin);
        match self.mode {
            ScanMode::Parallel => Ray {
                origin: [u * n[0], u * n[1]],
                dir: d,
            },
            ScanMode::Fan => {
                let src = [-self.source_to_center * d[0], -self.source_to_center * d[1]];
                let v = [
                    self.source_to_detector * d[0] + u * n[0],
                    self.source_to_detector * d[1] + u * n[1],
                ];
                let len = (v[0] * v[0] + v[1] * v[1]).sqrt();
                Ray {
                    origin: src,
                    dir: [v[0] / len, v[1] / len],
                }
            }
        }
    }

    /// Evenly spaced views at one degree: `0, 1, ..., count-1`.
    pub fn degree_views(count: usize) -> Vec<f64> {
        (0..count).map(|i| i as f64).collect()
    }

    /// Measured views `0..alpha_max` padded by `n_left` views before and
    /// `n_right` views after, one degree apart.
    pub fn extended_views(alpha_max: usize, n_left: usize, n_right: usize) -> Vec<f64> {
        (0..n_left + alpha_max + n_right)
            .map(|i| i as f64 - n_left as f64)
            .collect()
    }
}

/// A line with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
}

/// Dense image, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub data: Array2<f64>,
}

impl Image {
    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            data: Array2::zeros((h, w)),
        }
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(param_err("image contains non-finite values"));
        }
        Ok(Image {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_vec(h: usize, w: usize, v: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((h, w), v).map_err(|_| dim_err((h, w), "vector length"))?;
        Self::from_array(data)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }
}

/// Views x detector bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub data: Array2<f64>,
}

impl Sinogram {
    pub fn zeros(n_views: usize, n_detectors: usize) -> Self {
        Sinogram {
            data: Array2::zeros((n_views, n_detectors)),
        }
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(param_err("sinogram contains non-finite values"));
        }
        Ok(Sinogram {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn n_views(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_detectors(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn check_geometry(&self, g: &ScanGeometry) -> Result<()> {
        if self.shape() != g.sinogram_shape() {
            return Err(dim_err(g.sinogram_shape(), self.shape()));
        }
        Ok(())
    }
}

/// Walks the Joseph interpolation footprint of a ray, calling
/// `emit(pixel_index, weight)` for every non-zero contribution.
fn trace_ray(g: &ScanGeometry, ray: &Ray, mut emit: impl FnMut(usize, f64)) {
    let (h, w) = g.image_size;
    let ps = g.pixel_spacing;
    let cx = 0.5 * (w as f64 - 1.0);
    let cy = 0.5 * (h as f64 - 1.0);
    let [ox, oy] = ray.origin;
    let [dx, dy] = ray.dir;
    if dx.abs() >= dy.abs() {
        let step = ps / dx.abs();
        for j in 0..w {
            let x = (j as f64 - cx) * ps;
            let y = oy + (x - ox) / dx * dy;
            let r = cy - y / ps;
            if r <= -1.0 || r >= h as f64 {
                continue;
            }
            let i0 = r.floor();
            let f = r - i0;
            let i0 = i0 as isize;
            if i0 >= 0 {
                emit(i0 as usize * w + j, (1.0 - f) * step);
            }
            if i0 + 1 < h as isize && f > 0.0 {
                emit((i0 + 1) as usize * w + j, f * step);
            }
        }
    } else {
        let step = ps / dy.abs();
        for i in 0..h {
            let y = (cy - i as f64) * ps;
            let x = ox + (y - oy) / dy * dx;
            let c = cx + x / ps;
            if c <= -1.0 || c >= w as f64 {
                continue;
            }
            let j0 = c.floor();
            let f = c - j0;
            let j0 = j0 as isize;
            if j0 >= 0 {
                emit(i * w + j0 as usize, (1.0 - f) * step);
            }
            if j0 + 1 < w as isize && f > 0.0 {
                emit(i * w + (j0 + 1) as usize, f * step);
            }
        }
    }
}

/// Forward projector `A` and its transpose for one geometry.
#[derive(Clone, Debug)]
pub struct Projector {
    geometry: ScanGeometry,
}

impl Projector {
    pub fn new(geometry: ScanGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(Projector { geometry })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    fn check_image(&self, u: &Image) -> Result<()> {
        if u.shape() != self.geometry.image_size {
            return Err(dim_err(self.geometry.image_size, u.shape()));
        }
        Ok(())
    }

    pub fn forward(&self, u: &Image) -> Result<Sinogram> {
        self.check_image(u)?;
        let g = &self.geometry;
        let nd = g.n_detectors;
        let mut out = Sinogram::zeros(g.n_views(), nd);
        let src = u.as_slice();
        out.as_slice_mut()
            .par_chunks_mut(nd)
            .enumerate()
            .for_each(|(view, row)| {
                for (bin, value) in row.iter_mut().enumerate() {
                    let ray = g.ray(view, bin);
                    let mut acc = 0.0;
                    trace_ray(g, &ray, |idx, wgt| acc += wgt * src[idx]);
                    *value = acc;
                }
            });
        Ok(out)
    }

    /// Exact transpose of [`Projector::forward`].
    pub fn adjoint(&self, y: &Sinogram) -> Result<Image> {
        y.check_geometry(&self.geometry)?;
        let g = &self.geometry;
        let (h, w) = g.image_size;
        let nv = g.n_views();
        let nd = g.n_detectors;
        let chunk = nv.div_ceil(ADJOINT_CHUNKS).max(1);
        let ys = y.as_slice();
        let partials: Vec<Vec<f64>> = (0..nv)
            .step_by(chunk)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let mut acc = vec![0.0; h * w];
                for view in start..(start + chunk).min(nv) {
                    for bin in 0..nd {
                        let v = ys[view * nd + bin];
                        if v == 0.0 {
                            continue;
                        }
                        let ray = g.ray(view, bin);
                        trace_ray(g, &ray, |idx, wgt| acc[idx] += wgt * v);
                    }
                }
                acc
            })
            .collect();
        let mut out = Image::zeros(h, w);
        let dst = out.as_slice_mut();
        for p in &partials {
            for (d, s) in dst.iter_mut().zip(p) {
                *d += s;
            }
        }
        Ok(out)
    }
}

/// `A u` for geometry `g`.
pub fn forward_project(u: &Image, g: &ScanGeometry) -> Result<Sinogram> {
    Projector::new(g.clone())?.forward(u)
}

/// `A^T y` for geometry `g`.
pub fn back_project(y: &Sinogram, g: &ScanGeometry) -> Result<Image> {
    Projector::new(g.clone())?.adjoint(y)
}

/// An ellipse in physical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Counter-clockwise rotation of the first semi-axis from +x, degrees.
    pub rotation_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.semi_axes;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(param_err("ellipse semi-axes must be positive"));
        }
        Ok(())
    }

    /// Point in the ellipse's normalized frame (unit circle).
    fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let xr = c * dx + s * dy;
        let yr = -s * dx + c * dy;
        (xr / self.semi_axes.0, yr / self.semi_axes.1)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (p, q) = self.normalize(x, y);
        p * p + q * q <= 1.0
    }

    /// Length of the chord cut by `ray` (zero when it misses).
    pub fn chord_length(&self, ray: &Ray) -> f64 {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (a, b) = self.semi_axes;
        let (qx, qy) = self.normalize(ray.origin[0], ray.origin[1]);
        let [dx, dy] = ray.dir;
        let wx = (c * dx + s * dy) / a;
        let wy = (-s * dx + c * dy) / b;
        let qa = wx * wx + wy * wy;
        let qb = 2.0 * (qx * wx + qy * wy);
        let qc = qx * qx + qy * qy - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            0.0
        } else {
            disc.sqrt() / qa
        }
    }
}

/// Closed-form line integrals of a single ellipse for every ray of `g`.
pub fn analytic_ellipse_projection(ellipse: &Ellipse, g: &ScanGeometry) -> Result<Sinogram> {
    ellipse.validate()?;
    g.validate()?;
    let mut out = Sinogram::zeros(g.n_views(), g.n_detectors);
    for ((view, bin), v) in out.data.indexed_iter_mut() {
        *v = ellipse.intensity * ellipse.chord_length(&g.ray(view, bin));
    }
    Ok(out)
}

/// The view-selection operator `P` from an extended sinogram to the
/// measured rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AngleSelector {
    measured: Vec<usize>,
    n_total: usize,
}

impl AngleSelector {
    pub fn new(mut measured: Vec<usize>, n_total: usize) -> Result<Self> {
        measured.sort_unstable();
        if measured.windows(2).any(|w| w[0] == w[1]) {
            return Err(param_err("selector indices must be unique"));
        }
        if let Some(&last) = measured.last() {
            if last >= n_total {
                return Err(param_err(format!(
                    "selector index {last} out of range for {n_total} views"
                )));
            }
        }
        Ok(AngleSelector { measured, n_total })
    }

    /// `len` consecutive measured views starting at `start`.
    pub fn contiguous(start: usize, len: usize, n_total: usize) -> Result<Self> {
        Self::new((start..start + len).collect(), n_total)
    }

    pub fn measured_indices(&self) -> &[usize] {
        &self.measured
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_measured(&self) -> usize {
        self.measured.len()
    }

    /// One flag per extended view.
    pub fn measured_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_total];
        for &i in &self.measured {
            m[i] = true;
        }
        m
    }

    /// `P y_full`.
    pub fn select(&self, y_full: &Sinogram) -> Result<Sinogram> {
        if let Some(&last) = self.measured.last() {
            if last >= y_full.n_views() {
                return Err(param_err(format!(
                    "selector index {last} out of range for {} rows",
                    y_full.n_views()
                )));
            }
        }
        let nd = y_full.n_detectors();
        let mut out = Sinogram::zeros(self.measured.len(), nd);
        for (r, &i) in self.measured.iter().enumerate() {
            out.data.row_mut(r).assign(&y_full.data.row(i));
        }
        Ok(out)
    }

    /// `P^T y`: measured rows scattered into an `n_total`-row sinogram.
    pub fn embed(&self, y: &Sinogram) -> Result<Sinogram> {
        if y.n_views() != self.measured.len() {
            return Err(dim_err(self.measured.len(), y.n_views()));
        }
        let mut out = Sinogram::zeros(self.n_total, y.n_detectors());
        for (r, &i) in self.measured.iter().enumerate() {
            out.data.row_mut(i).assign(&y.data.row(r));
        }
        Ok(out)
    }
}

pub fn select_views(y_full: &Sinogram, p: &AngleSelector) -> Result<Sinogram> {
    p.select(y_full)
}

pub fn embed_views(y: &Sinogram, p: &AngleSelector, n_total: usize) -> Result<Sinogram> {
    if n_total != p.n_total() {
        return Err(dim_err(p.n_total(), n_total));
    }
    p.embed(y)
}

/// The measured and extended geometries of a limited-angle scan.
#[derive(Clone, Debug)]
pub struct LimitedAngleSetup {
    pub extended: ScanGeometry,
    pub measured: ScanGeometry,
    pub selector: AngleSelector,
}

impl LimitedAngleSetup {
    pub fn new(extended: ScanGeometry, selector: AngleSelector) -> Result<Self> {
        if selector.n_total() != extended.n_views() {
            return Err(dim_err(extended.n_views(), selector.n_total()));
        }
        let measured = extended.subset(selector.measured_indices())?;
        Ok(LimitedAngleSetup {
            extended,
            measured,
            selector,
        })
    }

    /// Views `0..alpha_max` measured, `n_left`/`n_right` extrapolated views
    /// on either side.
    pub fn one_degree(
        mode: ScanMode,
        image_size: (usize, usize),
        n_detectors: usize,
        alpha_max: usize,
        n_left: usize,
        n_right: usize,
    ) -> Result<Self> {
        if alpha_max == 0 {
            return Err(param_err("alpha_max must be at least one view"));
        }
        let ext = ScanGeometry::new(
            mode,
            image_size,
            ScanGeometry::extended_views(alpha_max, n_left, n_right),
            n_detectors,
        )?;
        let sel = AngleSelector::contiguous(n_left, alpha_max, ext.n_views())?;
        Self::new(ext, sel)
    }

    pub fn n_left(&self) -> usize {
        self.selector.measured_indices().first().copied().unwrap_or(0)
    }

    pub fn n_right(&self) -> usize {
        self.selector.n_total()
            - self.selector.measured_indices().last().map_or(0, |&l| l + 1)
    }
}
