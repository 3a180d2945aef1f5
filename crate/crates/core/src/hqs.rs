//! Extrapolation-constrained half-quadratic splitting with conjugate gradient.
//!
//! The solver minimizes
//!
//! ```text
//! 1/2 |A u - Y|^2 + lambda |z|_1 + 1/2 sum_i gamma_i |W_i u - z_i|^2
//!     + beta1 |P Yt - Y|^2 + beta2 |At u - Yt|^2
//! ```
//!
//! by alternating exact minimization over the extended sinogram `Yt`, the
//! image `u` (conjugate gradient on the normal equations) and the frame
//! coefficients `z` (soft-thresholding). `A` is the measured projector, `At`
//! the projector over measured plus extrapolated views and `P` the view
//! selector, so `A = P At`.

use crate::error::{dim_err, param_err, Error, Result};
use crate::framelet::{FrameCoeffs, FrameTransform};
use crate::geometry::{AngleSelector, Image, LimitedAngleSetup, Projector, ScanGeometry, Sinogram};

/// Scalar weights of the splitting objective and the inner solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct HqsConfig {
    pub lambda: f64,
    /// One weight per highpass channel, or a single weight for all.
    pub gamma: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub outer_iters: usize,
    pub cg_max_iters: usize,
    pub cg_tol: f64,
    pub frame_levels: usize,
}

impl Default for HqsConfig {
    fn default() -> Self {
        HqsConfig {
            lambda: 1e-3,
            gamma: vec![1.0],
            beta1: 1.0,
            beta2: 0.1,
            outer_iters: 3,
            cg_max_iters: 30,
            cg_tol: 1e-6,
            frame_levels: 1,
        }
    }
}

impl HqsConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda) {
            return Err(param_err("lambda must be finite and non-negative"));
        }
        if self.gamma.is_empty() || !self.gamma.iter().all(|&g| finite_nonneg(g)) {
            return Err(param_err("gamma must be non-empty, finite and non-negative"));
        }
        if !finite_nonneg(self.beta1) || !finite_nonneg(self.beta2) {
            return Err(param_err("beta1/beta2 must be finite and non-negative"));
        }
        if self.beta1 + self.beta2 <= 0.0 {
            return Err(param_err("beta1 + beta2 must be positive"));
        }
        if self.outer_iters == 0 || self.cg_max_iters == 0 || self.frame_levels == 0 {
            return Err(param_err("iteration counts and frame levels must be at least 1"));
        }
        if !finite_nonneg(self.cg_tol) {
            return Err(param_err("cg_tol must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn frame(&self) -> FrameTransform {
        FrameTransform {
            levels: self.frame_levels,
        }
    }

    /// `gamma_i` for each of `m` highpass channels.
    pub fn gamma_per_channel(&self, m: usize) -> Result<Vec<f64>> {
        match self.gamma.len() {
            1 => Ok(vec![self.gamma[0]; m]),
            n if n == m => Ok(self.gamma.clone()),
            n => Err(dim_err(m, n)),
        }
    }

    /// Soft-threshold levels `lambda / gamma_i`.
    pub fn thresholds(&self, m: usize) -> Result<Vec<f64>> {
        self.gamma_per_channel(m)?
            .into_iter()
            .map(|g| {
                if g > 0.0 {
                    Ok(self.lambda / g)
                } else if self.lambda == 0.0 {
                    Ok(0.0)
                } else {
                    Err(param_err("gamma_i = 0 with lambda > 0 leaves z_i unbounded"))
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct CgResult {
    pub x: Image,
    /// `|b - A x| / |b|` at exit.
    pub residual: f64,
    pub iters: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for a symmetric positive definite `apply`.
pub fn cg_solve<F>(apply: F, rhs: &Image, x0: &Image, max_iters: usize, tol: f64) -> Result<CgResult>
where
    F: Fn(&Image) -> Result<Image>,
{
    if rhs.shape() != x0.shape() {
        return Err(dim_err(rhs.shape(), x0.shape()));
    }
    let b_norm = dot(rhs.as_slice(), rhs.as_slice()).sqrt();
    let mut x = x0.clone();
    let ax = apply(&x)?;
    let mut r: Vec<f64> = rhs.as_slice().iter().zip(ax.as_slice()).map(|(b, a)| b - a).collect();
    let mut rr = dot(&r, &r);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    if !rr.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    if rr.sqrt() <= tol * scale || rr == 0.0 {
        return Ok(CgResult {
            x,
            residual: rr.sqrt() / scale,
            iters: 0,
        });
    }
    let mut p = Image::from_vec(rhs.shape().0, rhs.shape().1, r.clone())?;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let ap = apply(&p)?;
        let pap = dot(p.as_slice(), ap.as_slice());
        if !pap.is_finite() {
            return Err(Error::Divergence { iteration: iters });
        }
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for (xv, pv) in x.as_slice_mut().iter_mut().zip(p.as_slice()) {
            *xv += alpha * pv;
        }
        for (rv, av) in r.iter_mut().zip(ap.as_slice()) {
            *rv -= alpha * av;
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Divergence { iteration: iters });
        }
        if rr_new.sqrt() <= tol * scale {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pv, rv) in p.as_slice_mut().iter_mut().zip(&r) {
            *pv = rv + beta * *pv;
        }
    }
    Ok(CgResult {
        x,
        residual: rr.sqrt() / scale,
        iters,
    })
}

/// Closed-form `Yt` given `At u`: measured rows become
/// `(beta1 Y + beta2 At u) / (beta1 + beta2)`, the rest equal `At u`.
pub fn y_tilde_from_projection(
    y: &Sinogram,
    a_ext_u: &Sinogram,
    p: &AngleSelector,
    beta1: f64,
    beta2: f64,
) -> Result<Sinogram> {
    if beta1 + beta2 <= 0.0 {
        return Err(param_err("beta1 + beta2 must be positive"));
    }
    if a_ext_u.n_views() != p.n_total() {
        return Err(dim_err(p.n_total(), a_ext_u.n_views()));
    }
    if y.n_views() != p.n_measured() || y.n_detectors() != a_ext_u.n_detectors() {
        return Err(dim_err((p.n_measured(), a_ext_u.n_detectors()), y.shape()));
    }
    let mut out = a_ext_u.clone();
    let denom = beta1 + beta2;
    for (r, &i) in p.measured_indices().iter().enumerate() {
        let meas = y.data.row(r);
        for (o, &m) in out.data.row_mut(i).iter_mut().zip(meas.iter()) {
            *o = (beta1 * m + beta2 * *o) / denom;
        }
    }
    Ok(out)
}

/// `Yt^{k+1} = (beta1 P^T P + beta2)^{-1} [beta1 P^T Y + beta2 At u^k]`.
pub fn y_tilde_update(
    y: &Sinogram,
    u: &Image,
    p: &AngleSelector,
    g_ext: &ScanGeometry,
    beta1: f64,
    beta2: f64,
) -> Result<Sinogram> {
    if g_ext.n_views() != p.n_total() {
        return Err(dim_err(p.n_total(), g_ext.n_views()));
    }
    let a_u = Projector::new(g_ext.clone())?.forward(u)?;
    y_tilde_from_projection(y, &a_u, p, beta1, beta2)
}

/// `z^{k+1}_i = tau_{lambda/gamma_i}(W_i u^{k+1})`.
pub fn z_update(u: &Image, t: &FrameTransform, cfg: &HqsConfig) -> Result<FrameCoeffs> {
    let z = t.decompose(u)?;
    let thr = cfg.thresholds(z.n_highpass())?;
    crate::framelet::soft_threshold(&z, &thr)
}

/// Supplies the conjugate-gradient starting point at each outer step.
pub trait InitHook {
    fn initialize(&mut self, step: usize, u: &Image) -> Result<Image>;
}

/// Warm start from the current iterate.
#[derive(Clone, Copy, Debug, Default)]
pub struct WarmStart;

impl InitHook for WarmStart {
    fn initialize(&mut self, _step: usize, u: &Image) -> Result<Image> {
        Ok(u.clone())
    }
}

impl<F> InitHook for F
where
    F: FnMut(usize, &Image) -> Result<Image>,
{
    fn initialize(&mut self, step: usize, u: &Image) -> Result<Image> {
        self(step, u)
    }
}

#[derive(Clone, Debug)]
pub struct HqsState {
    pub u: Image,
    pub z: FrameCoeffs,
    pub y_tilde: Sinogram,
    pub iteration: usize,
    /// Objective before the first step followed by one value per step.
    pub objective_history: Vec<f64>,
    pub iterates: Vec<Image>,
    pub cg_iters: Vec<usize>,
    pub cg_residuals: Vec<f64>,
}

/// Operators and weights of one reconstruction problem.
#[derive(Clone, Debug)]
pub struct HqsProblem {
    setup: LimitedAngleSetup,
    projector: Projector,
    frame: FrameTransform,
    cfg: HqsConfig,
    gamma: Vec<f64>,
    /// Per extended view: `[measured] + 2 beta2`.
    row_weights: Vec<f64>,
}

impl HqsProblem {
    pub fn new(setup: LimitedAngleSetup, cfg: HqsConfig) -> Result<Self> {
        cfg.validate()?;
        let frame = cfg.frame();
        let gamma = cfg.gamma_per_channel(frame.n_highpass())?;
        let projector = Projector::new(setup.extended.clone())?;
        let row_weights = setup
            .selector
            .measured_mask()
            .into_iter()
            .map(|m| if m { 1.0 } else { 0.0 } + 2.0 * cfg.beta2)
            .collect();
        Ok(HqsProblem {
            setup,
            projector,
            frame,
            cfg,
            gamma,
            row_weights,
        })
    }

    pub fn setup(&self) -> &LimitedAngleSetup {
        &self.setup
    }

    pub fn config(&self) -> &HqsConfig {
        &self.cfg
    }

    pub fn frame(&self) -> &FrameTransform {
        &self.frame
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.setup.extended.image_size
    }

    fn check_measured(&self, y: &Sinogram) -> Result<()> {
        y.check_geometry(&self.setup.measured)
    }

    /// `sum_i gamma_i W_i^T W_i u` over highpass channels.
    pub fn frame_gram(&self, u: &Image) -> Result<Image> {
        let mut z = self.frame.decompose(u)?;
        z.channels[0].fill(0.0);
        for (c, g) in z.highpass_mut().iter_mut().zip(&self.gamma) {
            *c *= *g;
        }
        self.frame.reconstruct(&z)
    }

    /// `(A^T A + sum_i gamma_i W_i^T W_i + 2 beta2 At^T At) u`.
    pub fn system_apply(&self, u: &Image) -> Result<Image> {
        let mut proj = self.projector.forward(u)?;
        for (mut row, w) in proj.data.rows_mut().into_iter().zip(&self.row_weights) {
            row *= *w;
        }
        let mut out = self.projector.adjoint(&proj)?;
        if self.gamma.iter().any(|&g| g != 0.0) {
            out.data += &self.frame_gram(u)?.data;
        }
        Ok(out)
    }

    /// `A^T Y + sum_i gamma_i W_i^T z_i + 2 beta2 At^T Yt`.
    pub fn rhs(&self, y: &Sinogram, y_tilde: &Sinogram, z: &FrameCoeffs) -> Result<Image> {
        self.check_measured(y)?;
        y_tilde.check_geometry(&self.setup.extended)?;
        let mut s = self.setup.selector.embed(y)?;
        s.data.scaled_add(2.0 * self.cfg.beta2, &y_tilde.data);
        let mut out = self.projector.adjoint(&s)?;
        if z.channels.len() != self.frame.n_channels() {
            return Err(dim_err(self.frame.n_channels(), z.channels.len()));
        }
        let mut zs = z.clone();
        zs.channels[0].fill(0.0);
        for (c, g) in zs.highpass_mut().iter_mut().zip(&self.gamma) {
            *c *= *g;
        }
        out.data += &self.frame.reconstruct(&zs)?.data;
        Ok(out)
    }

    pub fn y_tilde_update(&self, y: &Sinogram, u: &Image) -> Result<Sinogram> {
        self.check_measured(y)?;
        let a_u = self.projector.forward(u)?;
        y_tilde_from_projection(y, &a_u, &self.setup.selector, self.cfg.beta1, self.cfg.beta2)
    }

    pub fn u_update(&self, y: &Sinogram, y_tilde: &Sinogram, z: &FrameCoeffs, u_init: &Image) -> Result<CgResult> {
        if u_init.shape() != self.image_size() {
            return Err(dim_err(self.image_size(), u_init.shape()));
        }
        let b = self.rhs(y, y_tilde, z)?;
        cg_solve(|v| self.system_apply(v), &b, u_init, self.cfg.cg_max_iters, self.cfg.cg_tol)
    }

    pub fn z_update(&self, u: &Image) -> Result<FrameCoeffs> {
        z_update(u, &self.frame, &self.cfg)
    }

    /// The splitting objective at `(u, z, Yt)`.
    pub fn objective(&self, y: &Sinogram, u: &Image, z: &FrameCoeffs, y_tilde: &Sinogram) -> Result<f64> {
        self.check_measured(y)?;
        let a_ext_u = self.projector.forward(u)?;
        let a_u = self.setup.selector.select(&a_ext_u)?;
        let data: f64 = 0.5 * (&a_u.data - &y.data).iter().map(|v| v * v).sum::<f64>();
        let sparsity = self.cfg.lambda * z.highpass_l1();
        let wu = self.frame.decompose(u)?;
        let mut coupling = 0.0;
        for ((a, b), g) in wu.highpass().iter().zip(z.highpass()).zip(&self.gamma) {
            coupling += 0.5 * g * (a - b).iter().map(|v| v * v).sum::<f64>();
        }
        let py = self.setup.selector.select(y_tilde)?;
        let meas: f64 = (&py.data - &y.data).iter().map(|v| v * v).sum();
        let ext: f64 = (&a_ext_u.data - &y_tilde.data).iter().map(|v| v * v).sum();
        Ok(data + sparsity + coupling + self.cfg.beta1 * meas + self.cfg.beta2 * ext)
    }

    /// `outer_iters` rounds of (Yt-update, u-update, z-update) from `u = 0`.
    pub fn run(&self, y: &Sinogram, hook: &mut dyn InitHook) -> Result<(Image, HqsState)> {
        self.check_measured(y)?;
        let (h, w) = self.image_size();
        let u = Image::zeros(h, w);
        let z = FrameCoeffs::zeros(&self.frame, (h, w));
        let y_tilde = self.setup.selector.embed(y)?;
        let obj0 = self.objective(y, &u, &z, &y_tilde)?;
        let mut state = HqsState {
            u,
            z,
            y_tilde,
            iteration: 0,
            objective_history: vec![obj0],
            iterates: Vec::with_capacity(self.cfg.outer_iters),
            cg_iters: Vec::new(),
            cg_residuals: Vec::new(),
        };
        for k in 0..self.cfg.outer_iters {
            state.y_tilde = self.y_tilde_update(y, &state.u)?;
            let init = hook.initialize(k, &state.u)?;
            let cg = self.u_update(y, &state.y_tilde, &state.z, &init)?;
            state.u = cg.x;
            state.cg_iters.push(cg.iters);
            state.cg_residuals.push(cg.residual);
            state.z = self.z_update(&state.u)?;
            state.iteration = k + 1;
            state.iterates.push(state.u.clone());
            let obj = self.objective(y, &state.u, &state.z, &state.y_tilde)?;
            state.objective_history.push(obj);
        }
        Ok((state.u.clone(), state))
    }
}

/// Image-domain HQS-CG; `hook` defaults to warm starting from the current iterate.
pub fn hqs_cg_run(
    y: &Sinogram,
    setup: &LimitedAngleSetup,
    cfg: &HqsConfig,
    hook: Option<&mut dyn InitHook>,
) -> Result<(Image, HqsState)> {
    let problem = HqsProblem::new(setup.clone(), cfg.clone())?;
    match hook {
        Some(h) => problem.run(y, h),
        None => problem.run(y, &mut WarmStart),
    }
}

/// Free-function form of [`HqsProblem::u_update`].
pub fn u_update(
    y: &Sinogram,
    y_tilde: &Sinogram,
    z: &FrameCoeffs,
    setup: &LimitedAngleSetup,
    cfg: &HqsConfig,
    u_init: &Image,
) -> Result<CgResult> {
    HqsProblem::new(setup.clone(), cfg.clone())?.u_update(y, y_tilde, z, u_init)
}
