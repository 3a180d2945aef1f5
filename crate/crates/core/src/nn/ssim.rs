//! Multi-scale structural similarity built from graph operations, so the
//! same code serves as metric and as differentiable loss.

use std::sync::Arc;

use super::graph::{Graph, Var};
use super::linear::GaussianValid;
use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Result};
use crate::geometry::Image;

/// Standard per-scale exponents for five levels.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsimConfig {
    pub levels: usize,
    pub kernel: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            levels: 5,
            kernel: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn halved(n: usize, times: usize) -> usize {
    (0..times).fold(n, |n, _| n.div_ceil(2))
}

impl MsSsimConfig {
    pub fn with_levels(levels: usize) -> Self {
        MsSsimConfig {
            levels,
            ..Self::default()
        }
    }

    /// Largest level count (up to five) usable on an `h x w` image.
    pub fn max_levels(&self, h: usize, w: usize) -> usize {
        (1..=MS_SSIM_WEIGHTS.len())
            .take_while(|&l| halved(h.min(w), l - 1) >= self.kernel)
            .last()
            .unwrap_or(0)
    }

    /// This configuration with `levels` lowered to fit an `h x w` image.
    pub fn fitted(&self, h: usize, w: usize) -> Result<Self> {
        let levels = self.levels.min(self.max_levels(h, w));
        let c = MsSsimConfig { levels, ..*self };
        c.validate(h, w)?;
        Ok(c)
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.levels == 0 || self.levels > MS_SSIM_WEIGHTS.len() {
            return Err(param_err(format!("MS-SSIM levels must be 1..=5, got {}", self.levels)));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) || !(self.sigma > 0.0) {
            return Err(param_err("MS-SSIM window must be odd with positive sigma"));
        }
        if self.levels > self.max_levels(h, w) {
            return Err(param_err(format!(
                "{h}x{w} image is too small for {} MS-SSIM levels with a {}-tap window",
                self.levels, self.kernel
            )));
        }
        Ok(())
    }

    /// Exponents of the used scales, renormalized to sum to one.
    pub fn weights(&self) -> Vec<f64> {
        let w = &MS_SSIM_WEIGHTS[..self.levels];
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }
}

/// Records MS-SSIM of single-channel `a` and `b` on `g`; returns a scalar node.
pub fn ms_ssim_graph(g: &mut Graph, a: Var, b: Var, data_range: f64, cfg: &MsSsimConfig) -> Result<Var> {
    let shape = g.value(a).shape();
    if shape != g.value(b).shape() {
        return Err(dim_err(shape, g.value(b).shape()));
    }
    if shape[0] != 1 {
        return Err(param_err("MS-SSIM expects single-channel images"));
    }
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(param_err("data range must be positive"));
    }
    cfg.validate(shape[1], shape[2])?;
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let weights = cfg.weights();
    let (mut a, mut b) = (a, b);
    let mut result: Option<Var> = None;
    for (level, &wt) in weights.iter().enumerate() {
        let last = level + 1 == cfg.levels;
        let s = g.value(a).shape();
        let win = Arc::new(GaussianValid::new(cfg.kernel, cfg.sigma, s));
        let mu_a = g.linear(a, win.clone())?;
        let mu_b = g.linear(b, win.clone())?;
        let aa = g.mul(a, a)?;
        let bb = g.mul(b, b)?;
        let ab = g.mul(a, b)?;
        let e_aa = g.linear(aa, win.clone())?;
        let e_bb = g.linear(bb, win.clone())?;
        let e_ab = g.linear(ab, win)?;
        let mu_aa = g.mul(mu_a, mu_a)?;
        let mu_bb = g.mul(mu_b, mu_b)?;
        let mu_ab = g.mul(mu_a, mu_b)?;
        let var_a = g.sub(e_aa, mu_aa)?;
        let var_b = g.sub(e_bb, mu_bb)?;
        let cov = g.sub(e_ab, mu_ab)?;

        let cs_num = g.scale(cov, 2.0);
        let cs_num = g.add_scalar(cs_num, c2);
        let cs_den = g.add(var_a, var_b)?;
        let cs_den = g.add_scalar(cs_den, c2);
        let cs_map = g.div(cs_num, cs_den)?;

        let term = if last {
            let l_num = g.scale(mu_ab, 2.0);
            let l_num = g.add_scalar(l_num, c1);
            let l_den = g.add(mu_aa, mu_bb)?;
            let l_den = g.add_scalar(l_den, c1);
            let l_map = g.div(l_num, l_den)?;
            let ssim_map = g.mul(l_map, cs_map)?;
            g.mean(ssim_map)
        } else {
            g.mean(cs_map)
        };
        let term = g.relu(term);
        let term = g.pow_const(term, wt);
        result = Some(match result {
            None => term,
            Some(r) => g.mul(r, term)?,
        });
        if !last {
            a = g.avg_pool2(a);
            b = g.avg_pool2(b);
        }
    }
    Ok(result.expect("at least one level"))
}

/// MS-SSIM of two images.
pub fn ms_ssim(a: &Image, b: &Image, data_range: f64, cfg: &MsSsimConfig) -> Result<f64> {
    let mut g = Graph::new();
    let va = g.constant(Tensor::from_image(a));
    let vb = g.constant(Tensor::from_image(b));
    let s = ms_ssim_graph(&mut g, va, vb, data_range, cfg)?;
    Ok(g.value(s).item())
}

/// `1 - MS-SSIM`.
pub fn loss_ssim(a: &Image, b: &Image, data_range: f64, cfg: &MsSsimConfig) -> Result<f64> {
    Ok(1.0 - ms_ssim(a, b, data_range, cfg)?)
}
