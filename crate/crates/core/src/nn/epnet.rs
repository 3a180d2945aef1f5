//! The assembled dual-domain network: sinogram extrapolation and
//! enhancement, an image-domain reconstruction through the inversion layer,
//! and unrolled half-quadratic splitting whose conjugate-gradient solves are
//! started from the fusion U-Net's output.

use std::sync::Arc;

use super::graph::{Graph, LinearMap, Var};
use super::linear::{FrameMap, HqsSystemMap, ProjectorMap, RilMap};
use super::losses::{loss_epl_graph, total_loss_graph, ExtrapolationMask, LossTerms, LossWeights, TotalLossInputs};
use super::networks::{Epl, InitCnn, SeNet};
use super::params::{adam_step, AdamConfig, AdamState, ParamStore};
use super::ssim::MsSsimConfig;
use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Error, Result};
use crate::fbp::{Fbp, FilterSpec};
use crate::geometry::{Image, LimitedAngleSetup, Sinogram};
use crate::hqs::{HqsConfig, HqsProblem, HqsState};
use crate::simulate::DatasetItem;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpNetConfig {
    pub hqs: HqsConfig,
    /// Filter of the inversion layer.
    pub filter: FilterSpec,
    pub loss: LossWeights,
    pub ssim: MsSsimConfig,
    /// Seed of the network initialization.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Adam steps on the extrapolation loss alone, run before `steps`.
    pub epl_pretrain_steps: usize,
    /// Freeze the extrapolator after pretraining.
    pub freeze_epl: bool,
    pub steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epl_pretrain_steps: 0,
            freeze_epl: false,
            steps: 200,
        }
    }
}

/// Output of inference together with every intermediate.
#[derive(Clone, Debug)]
pub struct EpNetOutput {
    pub image: Image,
    /// Extrapolated sinogram over the extended views.
    pub y_out: Sinogram,
    /// Enhanced extended sinogram.
    pub y_se: Sinogram,
    /// Reconstruction of `y_se` through the inversion layer.
    pub u_sino: Image,
    pub hqs: HqsState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub pretrain_curve: Vec<f64>,
    pub loss_curve: Vec<f64>,
    /// Dataset-mean total loss before any update.
    pub initial_mean_loss: f64,
    pub final_mean_loss: f64,
}

impl TrainReport {
    /// `1 - final / initial`.
    pub fn relative_reduction(&self) -> f64 {
        1.0 - self.final_mean_loss / self.initial_mean_loss
    }
}

pub struct EpNet {
    setup: LimitedAngleSetup,
    cfg: EpNetConfig,
    store: ParamStore,
    pub epl: Epl,
    pub senet: SeNet,
    pub initcnn: InitCnn,
    problem: Arc<HqsProblem>,
    ril: Arc<RilMap>,
    mask: ExtrapolationMask,
}

/// Constant tensors of the unrolled image update.
struct Unrolled {
    projector: Arc<dyn LinearMap>,
    frame: Arc<dyn LinearMap>,
    system: Arc<dyn LinearMap>,
    /// Per-row factor of `At u` in the extended-sinogram update.
    mix: Arc<Tensor>,
    gamma: Arc<Tensor>,
    thresholds: Arc<Vec<Option<f64>>>,
}

impl EpNet {
    pub fn new(setup: LimitedAngleSetup, cfg: EpNetConfig) -> Result<Self> {
        cfg.loss.validate()?;
        let (h, w) = setup.extended.image_size;
        cfg.ssim.validate(h, w)?;
        let problem = Arc::new(HqsProblem::new(setup.clone(), cfg.hqs.clone())?);
        let fbp = Arc::new(Fbp::new(setup.extended.clone(), cfg.filter)?);
        let mut store = ParamStore::new();
        let epl = Epl::new(&mut store, setup.n_left(), setup.n_right(), cfg.seed)?;
        let senet = SeNet::new(&mut store, cfg.seed.wrapping_add(10))?;
        let initcnn = InitCnn::new(&mut store, cfg.seed.wrapping_add(20))?;
        let mask = ExtrapolationMask::new(&setup.selector, setup.extended.n_detectors);
        Ok(EpNet {
            setup,
            cfg,
            store,
            epl,
            senet,
            initcnn,
            problem,
            ril: Arc::new(RilMap::new(fbp)),
            mask,
        })
    }

    pub fn setup(&self) -> &LimitedAngleSetup {
        &self.setup
    }

    pub fn config(&self) -> &EpNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn mask(&self) -> &ExtrapolationMask {
        &self.mask
    }

    fn check_measured(&self, y: &Sinogram) -> Result<()> {
        y.check_geometry(&self.setup.measured)
    }

    /// Records the sinogram branch: returns `(y_out, y_se, RIL(y_se))`.
    fn sinogram_branch(&self, g: &mut Graph, y: Var) -> Result<(Var, Var, Var)> {
        let y_out = self.epl.forward(g, &self.store, y)?;
        let y_se = self.senet.forward(g, &self.store, y_out)?;
        let u_sino = g.linear(y_se, self.ril.clone())?;
        Ok((y_out, y_se, u_sino))
    }

    /// Inference. The conjugate-gradient solves run outside any graph.
    pub fn forward(&self, y: &Sinogram) -> Result<EpNetOutput> {
        self.check_measured(y)?;
        let mut g = Graph::new();
        let yv = g.constant(Tensor::from_sinogram(y));
        let (y_out, y_se, u_sino) = self.sinogram_branch(&mut g, yv)?;
        let u_sino_t = g.value(u_sino).clone();
        let mut hook = |_: usize, u: &Image| -> Result<Image> {
            let mut g = Graph::new();
            let a = g.constant(Tensor::from_image(u));
            let b = g.constant(u_sino_t.clone());
            let out = self.initcnn.forward(&mut g, &self.store, a, b)?;
            g.value(out).to_image()
        };
        let (image, hqs) = self.problem.run(y, &mut hook)?;
        Ok(EpNetOutput {
            image,
            y_out: g.value(y_out).to_sinogram()?,
            y_se: g.value(y_se).to_sinogram()?,
            u_sino: g.value(u_sino).to_image()?,
            hqs,
        })
    }

    fn unrolled(&self) -> Result<Unrolled> {
        let cfg = &self.cfg.hqs;
        let (h, w) = self.problem.image_size();
        let frame = *self.problem.frame();
        let m = frame.n_highpass();
        let gammas = cfg.gamma_per_channel(m)?;
        let mut gamma = Tensor::zeros([m + 1, h, w]);
        for (c, gm) in gammas.iter().enumerate() {
            gamma.plane_mut(c + 1).fill(*gm);
        }
        let thresholds = std::iter::once(None)
            .chain(cfg.thresholds(m)?.into_iter().map(Some))
            .collect();
        let (nv, nd) = self.setup.extended.sinogram_shape();
        let keep = cfg.beta2 / (cfg.beta1 + cfg.beta2);
        let mut mix = Tensor::filled([1, nv, nd], 1.0);
        for &i in self.setup.selector.measured_indices() {
            mix.data_mut()[i * nd..(i + 1) * nd].fill(keep);
        }
        Ok(Unrolled {
            projector: Arc::new(ProjectorMap::new(Arc::new(self.problem.projector().clone()))),
            frame: Arc::new(FrameMap::new(frame, (h, w))),
            system: Arc::new(HqsSystemMap::new(self.problem.clone())),
            mix: Arc::new(mix),
            gamma: Arc::new(gamma),
            thresholds: Arc::new(thresholds),
        })
    }

    /// Conjugate gradient recorded on the graph. Stopping decisions use
    /// forward values, so the recorded path matches [`crate::hqs::cg_solve`].
    fn cg_graph(&self, g: &mut Graph, ops: &Unrolled, rhs: Var, x0: Var) -> Result<Var> {
        let cfg = &self.cfg.hqs;
        let b_norm = g.value(rhs).dot(g.value(rhs)).sqrt();
        let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
        let mut x = x0;
        let ax = g.linear(x, ops.system.clone())?;
        let mut r = g.sub(rhs, ax)?;
        let mut rr = g.dot(r, r)?;
        let rr0 = g.value(rr).item();
        if !rr0.is_finite() {
            return Err(Error::Divergence { iteration: 0 });
        }
        if rr0.sqrt() <= cfg.cg_tol * scale || rr0 == 0.0 {
            return Ok(x);
        }
        let mut p = r;
        for it in 1..=cfg.cg_max_iters {
            let ap = g.linear(p, ops.system.clone())?;
            let pap = g.dot(p, ap)?;
            let pap_v = g.value(pap).item();
            if !pap_v.is_finite() {
                return Err(Error::Divergence { iteration: it });
            }
            if pap_v <= 0.0 {
                break;
            }
            let alpha = g.div(rr, pap)?;
            let step = g.scale_by(p, alpha)?;
            x = g.add(x, step)?;
            let dr = g.scale_by(ap, alpha)?;
            r = g.sub(r, dr)?;
            let rr_new = g.dot(r, r)?;
            let v = g.value(rr_new).item();
            if !v.is_finite() {
                return Err(Error::Divergence { iteration: it });
            }
            if v.sqrt() <= cfg.cg_tol * scale {
                break;
            }
            let beta = g.div(rr_new, rr)?;
            rr = rr_new;
            let pb = g.scale_by(p, beta)?;
            p = g.add(r, pb)?;
        }
        Ok(x)
    }

    /// Records the full training forward pass for one item and returns the
    /// loss node with its terms.
    fn training_graph(&self, g: &mut Graph, item: &DatasetItem) -> Result<(Var, LossTerms)> {
        self.check_measured(&item.y_measured)?;
        item.y_gt_extended.check_geometry(&self.setup.extended)?;
        let cfg = &self.cfg.hqs;
        let ops = self.unrolled()?;
        let y = g.constant(Tensor::from_sinogram(&item.y_measured));
        let y_gt = g.constant(Tensor::from_sinogram(&item.y_gt_extended));
        let u_gt = g.constant(Tensor::from_image(&item.u_gt));
        let (y_out, y_se, u_sino) = self.sinogram_branch(g, y)?;

        let pty = Tensor::from_sinogram(&self.setup.selector.embed(&item.y_measured)?);
        let meas_part = pty.map(|v| cfg.beta1 / (cfg.beta1 + cfg.beta2) * v);
        let (h, w) = self.problem.image_size();
        let mut u = g.constant(Tensor::zeros([1, h, w]));
        let mut z: Option<Var> = None;
        let mut iterates = Vec::with_capacity(cfg.outer_iters);
        for _ in 0..cfg.outer_iters {
            let a_u = g.linear(u, ops.projector.clone())?;
            let mixed = g.mul_const(a_u, ops.mix.clone())?;
            let y_tilde = g.add_const(mixed, meas_part.clone())?;
            let init = self.initcnn.forward(g, &self.store, u, u_sino)?;

            let s = g.scale(y_tilde, 2.0 * cfg.beta2);
            let s = g.add_const(s, pty.clone())?;
            let mut rhs = g.linear_transpose(s, ops.projector.clone())?;
            if let Some(z) = z {
                let gz = g.mul_const(z, ops.gamma.clone())?;
                let wz = g.linear_transpose(gz, ops.frame.clone())?;
                rhs = g.add(rhs, wz)?;
            }
            u = self.cg_graph(g, &ops, rhs, init)?;
            let wu = g.linear(u, ops.frame.clone())?;
            z = Some(g.soft_threshold(wu, ops.thresholds.clone())?);
            iterates.push(u);
        }
        let inputs = TotalLossInputs {
            iterates: &iterates,
            u_gt,
            y_out,
            y_se,
            y_gt,
        };
        total_loss_graph(g, &inputs, &self.mask, &self.cfg.loss, &self.ril, &self.cfg.ssim)
    }

    /// Total loss of one item without recording gradients.
    pub fn loss(&self, item: &DatasetItem) -> Result<LossTerms> {
        let mut g = Graph::new();
        Ok(self.training_graph(&mut g, item)?.1)
    }

    /// Total loss and its gradient with respect to every trainable parameter.
    pub fn loss_and_grads(
        &self,
        item: &DatasetItem,
    ) -> Result<(LossTerms, std::collections::BTreeMap<super::params::ParamId, Tensor>)> {
        let mut g = Graph::new();
        let (l, terms) = self.training_graph(&mut g, item)?;
        Ok((terms, g.backward(l)?.params()))
    }

    /// Extrapolation loss of one item and its gradient.
    pub fn epl_loss_and_grads(
        &self,
        item: &DatasetItem,
    ) -> Result<(f64, std::collections::BTreeMap<super::params::ParamId, Tensor>)> {
        self.check_measured(&item.y_measured)?;
        let mut g = Graph::new();
        let y = g.constant(Tensor::from_sinogram(&item.y_measured));
        let y_gt = g.constant(Tensor::from_sinogram(&item.y_gt_extended));
        let y_out = self.epl.forward(&mut g, &self.store, y)?;
        let l = loss_epl_graph(&mut g, y_out, y_gt, &self.mask, &self.ril)?;
        Ok((g.value(l).item(), g.backward(l)?.params()))
    }

    pub fn mean_loss(&self, dataset: &[DatasetItem]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(param_err("empty dataset"));
        }
        let mut s = 0.0;
        for item in dataset {
            s += self.loss(item)?.total;
        }
        Ok(s / dataset.len() as f64)
    }
}

/// Extrapolator pretraining (optional), then Adam on the total loss with one
/// item per step in dataset order.
pub fn epnet_train(net: &mut EpNet, dataset: &[DatasetItem], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.adam.validate()?;
    if dataset.is_empty() {
        return Err(param_err("empty dataset"));
    }
    for item in dataset {
        if item.u_gt.shape() != net.setup.extended.image_size {
            return Err(dim_err(net.setup.extended.image_size, item.u_gt.shape()));
        }
    }
    let mut report = TrainReport {
        initial_mean_loss: net.mean_loss(dataset)?,
        ..Default::default()
    };

    if cfg.epl_pretrain_steps > 0 {
        let mut state = AdamState::new();
        for step in 0..cfg.epl_pretrain_steps {
            let (l, grads) = net.epl_loss_and_grads(&dataset[step % dataset.len()])?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let grads = grads
                .into_iter()
                .filter(|(id, _)| net.store.entry(*id).name.starts_with("epl."))
                .collect();
            adam_step(&mut net.store, &grads, &mut state, &cfg.adam)?;
            report.pretrain_curve.push(l);
        }
    }
    if cfg.freeze_epl {
        let epl = net.epl.clone();
        epl.set_frozen(&mut net.store, true);
    }

    let mut state = AdamState::new();
    for step in 0..cfg.steps {
        let (terms, grads) = net.loss_and_grads(&dataset[step % dataset.len()])?;
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam_step(&mut net.store, &grads, &mut state, &cfg.adam)?;
        report.loss_curve.push(terms.total);
    }
    report.final_mean_loss = net.mean_loss(dataset)?;
    Ok(report)
}

/// Inference with a trained network.
pub fn epnet_forward(net: &EpNet, y: &Sinogram) -> Result<EpNetOutput> {
    net.forward(y)
}
