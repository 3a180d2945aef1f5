//! Training losses, each available as a graph builder and as a plain
//! evaluation on images and sinograms.

use std::sync::Arc;

use super::graph::{Graph, LinearMap, Var};
use super::linear::RilMap;
use super::ssim::{ms_ssim_graph, MsSsimConfig};
use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Result};
use crate::fbp::Fbp;
use crate::geometry::{AngleSelector, Image, Sinogram};

/// One on extrapolated rows, zero on measured rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationMask {
    rows: Vec<bool>,
    n_detectors: usize,
}

impl ExtrapolationMask {
    pub fn new(selector: &AngleSelector, n_detectors: usize) -> Self {
        ExtrapolationMask {
            rows: selector.measured_mask().into_iter().map(|m| !m).collect(),
            n_detectors,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.n_detectors)
    }

    pub fn is_extrapolated(&self, row: usize) -> bool {
        self.rows[row]
    }

    /// The `1 + mask` weights as a `[1, views, detectors]` tensor.
    pub fn weights(&self) -> Tensor {
        let data = self
            .rows
            .iter()
            .flat_map(|&e| std::iter::repeat_n(if e { 2.0 } else { 1.0 }, self.n_detectors))
            .collect();
        Tensor::from_vec([1, self.rows.len(), self.n_detectors], data).expect("mask shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the structural-similarity term.
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { mu: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(param_err("mu must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `sum |(1 + mask) (y_out - y_gt)| + |RIL(y_out) - RIL(y_gt)|_1`.
pub fn loss_epl_graph(
    g: &mut Graph,
    y_out: Var,
    y_gt: Var,
    mask: &ExtrapolationMask,
    ril: &Arc<RilMap>,
) -> Result<Var> {
    let w = mask.weights();
    if g.value(y_out).shape() != w.shape() {
        return Err(dim_err(w.shape(), g.value(y_out).shape()));
    }
    let d = g.sub(y_out, y_gt)?;
    let wd = g.mul_const(d, Arc::new(w))?;
    let sino = g.l1(wd);
    let map: Arc<dyn LinearMap> = ril.clone();
    let r_out = g.linear(y_out, map.clone())?;
    let r_gt = g.linear(y_gt, map)?;
    let dr = g.sub(r_out, r_gt)?;
    let img = g.l1(dr);
    g.add(sino, img)
}

/// `|y_se - y_gt|_1 + |RIL(y_se) - u_gt|_1`.
pub fn loss_se_graph(g: &mut Graph, y_se: Var, y_gt: Var, u_gt: Var, ril: &Arc<RilMap>) -> Result<Var> {
    let d = g.sub(y_se, y_gt)?;
    let sino = g.l1(d);
    let r = g.linear(y_se, ril.clone())?;
    let dr = g.sub(r, u_gt)?;
    let img = g.l1(dr);
    g.add(sino, img)
}

/// Graph nodes feeding the total loss.
pub struct TotalLossInputs<'a> {
    pub iterates: &'a [Var],
    pub u_gt: Var,
    pub y_out: Var,
    pub y_se: Var,
    pub y_gt: Var,
}

/// Values of the individual loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub image: f64,
    pub ssim: f64,
    pub epl: f64,
    pub se: f64,
    pub total: f64,
}

/// `sum_i |u_i - u_gt|_2 + mu (1 - MS-SSIM(u_N, u_gt)) + L_EPL + L_SE`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    inputs: &TotalLossInputs<'_>,
    mask: &ExtrapolationMask,
    weights: &LossWeights,
    ril: &Arc<RilMap>,
    ssim: &MsSsimConfig,
) -> Result<(Var, LossTerms)> {
    weights.validate()?;
    let Some(&last) = inputs.iterates.last() else {
        return Err(param_err("total loss needs at least one iterate"));
    };
    let mut image = None;
    for &u in inputs.iterates {
        let d = g.sub(u, inputs.u_gt)?;
        let n = g.l2(d);
        image = Some(match image {
            None => n,
            Some(acc) => g.add(acc, n)?,
        });
    }
    let image = image.expect("non-empty");
    let gt = g.value(inputs.u_gt);
    let range = gt.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - gt.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let s = ms_ssim_graph(g, last, inputs.u_gt, range, ssim)?;
    let neg = g.scale(s, -weights.mu);
    let ssim_term = g.add_scalar(neg, weights.mu);
    let epl = loss_epl_graph(g, inputs.y_out, inputs.y_gt, mask, ril)?;
    let se = loss_se_graph(g, inputs.y_se, inputs.y_gt, inputs.u_gt, ril)?;
    let a = g.add(image, ssim_term)?;
    let b = g.add(a, epl)?;
    let total = g.add(b, se)?;
    let terms = LossTerms {
        image: g.value(image).item(),
        ssim: g.value(ssim_term).item(),
        epl: g.value(epl).item(),
        se: g.value(se).item(),
        total: g.value(total).item(),
    };
    Ok((total, terms))
}

pub fn loss_epl(y_out: &Sinogram, y_gt: &Sinogram, mask: &ExtrapolationMask, fbp: &Arc<Fbp>) -> Result<f64> {
    if y_out.shape() != mask.shape() || y_gt.shape() != mask.shape() {
        return Err(dim_err(mask.shape(), y_out.shape()));
    }
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_sinogram(y_out));
    let b = g.constant(Tensor::from_sinogram(y_gt));
    let l = loss_epl_graph(&mut g, a, b, mask, &Arc::new(RilMap::new(fbp.clone())))?;
    Ok(g.value(l).item())
}

pub fn loss_se(y_se: &Sinogram, y_gt: &Sinogram, u_gt: &Image, fbp: &Arc<Fbp>) -> Result<f64> {
    if y_se.shape() != y_gt.shape() {
        return Err(dim_err(y_gt.shape(), y_se.shape()));
    }
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_sinogram(y_se));
    let b = g.constant(Tensor::from_sinogram(y_gt));
    let u = g.constant(Tensor::from_image(u_gt));
    let l = loss_se_graph(&mut g, a, b, u, &Arc::new(RilMap::new(fbp.clone())))?;
    Ok(g.value(l).item())
}

/// Plain evaluation of the total loss.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    iterates: &[Image],
    u_gt: &Image,
    y_out: &Sinogram,
    y_se: &Sinogram,
    y_gt: &Sinogram,
    mask: &ExtrapolationMask,
    weights: &LossWeights,
    fbp: &Arc<Fbp>,
    ssim: &MsSsimConfig,
) -> Result<LossTerms> {
    let mut g = Graph::new();
    let us: Vec<Var> = iterates.iter().map(|u| g.constant(Tensor::from_image(u))).collect();
    let inputs = TotalLossInputs {
        iterates: &us,
        u_gt: g.constant(Tensor::from_image(u_gt)),
        y_out: g.constant(Tensor::from_sinogram(y_out)),
        y_se: g.constant(Tensor::from_sinogram(y_se)),
        y_gt: g.constant(Tensor::from_sinogram(y_gt)),
    };
    let ril = Arc::new(RilMap::new(fbp.clone()));
    Ok(total_loss_graph(&mut g, &inputs, mask, weights, &ril, ssim)?.1)
}
