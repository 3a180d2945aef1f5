//! Gradient-check cases shared by the autodiff tests and the acceptance run.

use std::sync::Arc;

use lact::config::{GeometryConfig, RunConfig};
use lact::fbp::{ril_apply, Fbp, FilterSpec};
use lact::framelet::FrameTransform;
use lact::geometry::{LimitedAngleSetup, Projector, ScanGeometry, ScanMode};
use lact::hqs::{HqsConfig, HqsProblem};
use lact::nn::linear::{FrameMap, GaussianValid, HqsSystemMap, ProjectorMap, RilMap};
use lact::nn::losses::{loss_epl, total_loss};
use lact::nn::{Axis, EpNet, ExtrapolationMask, Graph, LinearMap, Tensor, Var};
use lact::simulate::{make_dataset, DatasetItem};
use lact::{AngleSelector, Image, Result, Sinogram};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rel_err, rng};

pub fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 3], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, with random signs.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor {
    let mut t = random_tensor(r, shape, 0.2, 1.0);
    for v in t.data_mut() {
        if r.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

pub type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

pub struct NodeCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Box<Build>,
    pub tol: f64,
}

impl NodeCase {
    fn new(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Self {
        NodeCase {
            name,
            inputs,
            build: Box::new(build),
            tol: 1e-4,
        }
    }

    /// Worst relative error between the backward pass and central
    /// differences along a random direction, over all inputs.
    pub fn worst_error(&self) -> f64 {
        let mut weights = None;
        let (_, grads) = eval(&self.inputs, &*self.build, &mut weights);
        let mut r = rng(self.name.len() as u64);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..self.inputs.len() {
            let d = random_tensor(&mut r, self.inputs[i].shape(), -1.0, 1.0);
            let analytic = grads[i].dot(&d);
            let shifted = |s: f64| {
                let mut xs = self.inputs.clone();
                let mut step = d.clone();
                step.scale(s);
                xs[i].add_assign(&step);
                eval(&xs, &*self.build, &mut weights.clone()).0
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic, numeric, 1e-8));
        }
        worst
    }
}

/// Loss `<build(inputs), c>` for a fixed random `c`, and its input gradients.
fn eval(inputs: &[Tensor], build: &Build, weights: &mut Option<Tensor>) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let shape = g.value(out).shape();
    let c = weights
        .get_or_insert_with(|| random_tensor(&mut rng(7), shape, -1.0, 1.0))
        .clone();
    let cv = g.constant(c);
    let loss = g.dot(out, cv).unwrap();
    let grads = g.backward(loss).unwrap();
    let gs = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    (g.value(loss).item(), gs)
}

fn elementwise_cases() -> Vec<NodeCase> {
    let mut r = rng(1);
    let s = [2, 3, 4];
    let a = away_from_zero(&mut r, s);
    let b = away_from_zero(&mut r, s);
    let pos = random_tensor(&mut r, s, 0.5, 1.5);
    let konst = Arc::new(random_tensor(&mut r, s, -1.0, 1.0));
    let scalar = random_tensor(&mut r, [1, 1, 1], 0.5, 1.5);
    let c2 = (*konst).clone();
    // Keep every entry at least 0.05 away from the kinks at +-0.3.
    let st = a.map(|v| if (v.abs() - 0.3).abs() < 0.05 { v * 1.5 } else { v });
    let thr = Arc::new(vec![None, Some(0.3)]);
    vec![
        NodeCase::new("relu", vec![a.clone()], |g, v| Ok(g.relu(v[0]))),
        NodeCase::new("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1])),
        NodeCase::new("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1])),
        NodeCase::new("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1])),
        NodeCase::new("div", vec![a.clone(), pos.clone()], |g, v| g.div(v[0], v[1])),
        NodeCase::new("scale", vec![a.clone()], |g, v| Ok(g.scale(v[0], -2.5))),
        NodeCase::new("add_const", vec![a.clone()], move |g, v| g.add_const(v[0], c2.clone())),
        NodeCase::new("add_scalar", vec![a.clone()], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        NodeCase::new("mul_const", vec![a.clone()], move |g, v| g.mul_const(v[0], konst.clone())),
        NodeCase::new("scale_by", vec![a.clone(), scalar], |g, v| g.scale_by(v[0], v[1])),
        NodeCase::new("abs", vec![a.clone()], |g, v| Ok(g.abs(v[0]))),
        NodeCase::new("sqrt", vec![pos.clone()], |g, v| Ok(g.sqrt(v[0]))),
        NodeCase::new("pow_const", vec![pos], |g, v| Ok(g.pow_const(v[0], 0.3))),
        NodeCase::new("sum", vec![a.clone()], |g, v| Ok(g.sum(v[0]))),
        NodeCase::new("mean", vec![a.clone()], |g, v| Ok(g.mean(v[0]))),
        NodeCase::new("dot", vec![a.clone(), b], |g, v| g.dot(v[0], v[1])),
        NodeCase::new("l1", vec![a.clone()], |g, v| Ok(g.l1(v[0]))),
        NodeCase::new("l2", vec![a], |g, v| Ok(g.l2(v[0]))),
        NodeCase::new("soft_threshold", vec![st], move |g, v| g.soft_threshold(v[0], thr.clone())),
    ]
}

fn structural_cases() -> Vec<NodeCase> {
    let mut r = rng(2);
    let a = random_tensor(&mut r, [2, 5, 7], -1.0, 1.0);
    let b = random_tensor(&mut r, [3, 5, 7], -1.0, 1.0);
    let c = random_tensor(&mut r, [2, 4, 7], -1.0, 1.0);
    let small = random_tensor(&mut r, [2, 3, 4], -1.0, 1.0);
    let x = random_tensor(&mut r, [2, 6, 5], -1.0, 1.0);
    let w = random_tensor(&mut r, [3, 2, 9], -1.0, 1.0);
    let bias = random_tensor(&mut r, [3, 1, 1], -1.0, 1.0);
    vec![
        NodeCase::new("concat_channel", vec![a.clone(), b.clone()], |g, v| g.concat(&[v[0], v[1]], Axis::Channel)),
        NodeCase::new("concat_row", vec![a.clone(), c], |g, v| g.concat(&[v[0], v[1], v[0]], Axis::Row)),
        NodeCase::new("slice_channel", vec![b], |g, v| g.slice(v[0], Axis::Channel, 1, 2)),
        NodeCase::new("slice_row", vec![a.clone()], |g, v| g.slice(v[0], Axis::Row, 2, 3)),
        NodeCase::new("flip_rows", vec![a.clone()], |g, v| Ok(g.flip_rows(v[0]))),
        NodeCase::new("avg_pool2", vec![a], |g, v| Ok(g.avg_pool2(v[0]))),
        NodeCase::new("upsample2_odd", vec![small.clone()], |g, v| g.upsample2(v[0], 5, 7)),
        NodeCase::new("upsample2_even", vec![small], |g, v| g.upsample2(v[0], 6, 8)),
        NodeCase::new("conv2d", vec![x, w, bias], |g, v| g.conv2d(v[0], v[1], v[2])),
    ]
}

fn map_cases(name: &'static str, tname: &'static str, map: Arc<dyn LinearMap>) -> [NodeCase; 2] {
    let mut r = rng(4);
    let x = random_tensor(&mut r, map.in_shape(), -1.0, 1.0);
    let y = random_tensor(&mut r, map.out_shape(), -1.0, 1.0);
    let m = map.clone();
    [
        NodeCase::new(name, vec![x], move |g, v| g.linear(v[0], m.clone())),
        NodeCase::new(tname, vec![y], move |g, v| g.linear_transpose(v[0], map.clone())),
    ]
}

fn operator_cases() -> Vec<NodeCase> {
    let geom = ScanGeometry::new(ScanMode::Fan, (12, 12), ScanGeometry::degree_views(20), 18).unwrap();
    let ril = Arc::new(RilMap::new(Arc::new(Fbp::new(geom.clone(), FilterSpec::default()).unwrap())));
    let setup = LimitedAngleSetup::one_degree(ScanMode::Fan, (10, 10), 16, 12, 2, 2).unwrap();
    let problem = Arc::new(HqsProblem::new(setup, HqsConfig::default()).unwrap());
    let mut cases: Vec<NodeCase> = [
        map_cases("ril", "ril_transpose", ril.clone()),
        map_cases("projector", "projector_transpose", Arc::new(ProjectorMap::new(Arc::new(Projector::new(geom).unwrap())))),
        map_cases("frame", "frame_transpose", Arc::new(FrameMap::new(FrameTransform::new(2).unwrap(), (9, 10)))),
        map_cases("gaussian", "gaussian_transpose", Arc::new(GaussianValid::new(5, 1.5, [1, 9, 12]))),
        map_cases("hqs_system", "hqs_system_transpose", Arc::new(HqsSystemMap::new(problem))),
    ]
    .into_iter()
    .flatten()
    .collect();

    // RIL feeding an L1 image loss, the way the training losses use it.
    let mut r = rng(5);
    let target = random_tensor(&mut r, [1, 12, 12], -5.0, 5.0);
    let y = random_tensor(&mut r, [1, 20, 18], -1.0, 1.0);
    let mut l1 = NodeCase::new("ril_l1", vec![y], move |g, v| {
        let u = g.linear(v[0], ril.clone())?;
        let t = g.constant(target.clone());
        let d = g.sub(u, t)?;
        Ok(g.l1(d))
    });
    l1.tol = 1e-3;
    cases.push(l1);
    cases
}

/// Every primitive node, every linear operator node and its transpose.
pub fn node_cases() -> Vec<NodeCase> {
    let mut v = elementwise_cases();
    v.extend(structural_cases());
    v.extend(operator_cases());
    v
}

/// 32x32 fan-beam setup with a short unrolled solver.
pub fn tiny_run() -> RunConfig {
    let mut cfg = RunConfig {
        geometry: GeometryConfig {
            size: 32,
            detectors: 48,
            alpha_max: 20,
            n_left: 3,
            n_right: 3,
            pixel_spacing: 1.0 / 32.0,
            ..GeometryConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.hqs.outer_iters = 2;
    cfg.hqs.cg_max_iters = 3;
    cfg.hqs.cg_tol = 0.0;
    cfg
}

pub fn tiny_net_and_data(n: usize) -> (EpNet, Vec<DatasetItem>) {
    let cfg = tiny_run();
    let setup = cfg.geometry.setup().unwrap();
    let data = make_dataset(n, &cfg.phantom_spec(5), &setup, &cfg.noise).unwrap();
    (EpNet::new(setup, cfg.epnet(3).unwrap()).unwrap(), data)
}

pub struct SpotCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl SpotCheck {
    pub fn error(&self) -> f64 {
        rel_err(self.analytic, self.numeric, 1e-6)
    }
}

/// Central differences of the full training loss for one entry of each of
/// ten parameters spread over the network.
pub fn epnet_spot_checks() -> Vec<SpotCheck> {
    let (mut net, data) = tiny_net_and_data(1);
    let item = &data[0];
    let (_, grads) = net.loss_and_grads(item).unwrap();
    let entries = net.params().entries().to_vec();
    assert!(entries.len() >= 10);
    let mut r = rng(12);
    let h = 1e-5;
    (0..10)
        .map(|i| {
            let e = &entries[i * entries.len() / 10];
            let id = net.params().id(&e.name).unwrap();
            let j = r.random_range(0..e.value.len());
            let mut at = |delta: f64| {
                let mut v = e.value.clone();
                v.data_mut()[j] += delta;
                net.params_mut().load_value(&e.name, v, false).unwrap();
                net.loss(item).unwrap().total
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            net.params_mut().load_value(&e.name, e.value.clone(), false).unwrap();
            SpotCheck {
                param: e.name.clone(),
                index: j,
                analytic: grads[&id].data()[j],
                numeric,
            }
        })
        .collect()
}

/// Two views of two bins, view 1 measured: `(loss_epl, hand value)` for a
/// single-entry error on the extrapolated and on the measured row.
pub fn epl_hand_cases() -> Vec<(f64, f64)> {
    let g = ScanGeometry::parallel((3, 3), vec![0.0, 1.0], 2).unwrap();
    let fbp = Arc::new(Fbp::new(g, FilterSpec::default()).unwrap());
    let mask = ExtrapolationMask::new(&AngleSelector::new(vec![1], 2).unwrap(), 2);
    let gt = Sinogram::from_array(ndarray::array![[0.5, -1.0], [2.0, 0.25]]).unwrap();
    let e = 0.37;
    [(0, 2.0), (1, 1.0)]
        .into_iter()
        .map(|(row, weight)| {
            let mut out = gt.clone();
            out.as_slice_mut()[row * 2 + 1] += e;
            let mut diff = Sinogram::zeros(2, 2);
            diff.as_slice_mut()[row * 2 + 1] = e;
            let image_part: f64 = ril_apply(&diff, fbp.geometry(), fbp.filter())
                .unwrap()
                .as_slice()
                .iter()
                .map(|v| v.abs())
                .sum();
            (loss_epl(&out, &gt, &mask, &fbp).unwrap(), weight * e + image_part)
        })
        .collect()
}

/// Total loss with `u_gt = RIL(y_gt)` and every iterate and sinogram exact.
pub fn consistent_total_loss() -> f64 {
    let cfg = tiny_run();
    let setup = cfg.geometry.setup().unwrap();
    let fbp = Arc::new(Fbp::new(setup.extended.clone(), cfg.filter).unwrap());
    let data = make_dataset(1, &cfg.phantom_spec(2), &setup, &cfg.noise).unwrap();
    let y = &data[0].y_gt_extended;
    let u: Image = ril_apply(y, fbp.geometry(), fbp.filter()).unwrap();
    let mask = ExtrapolationMask::new(&setup.selector, cfg.geometry.detectors);
    let ssim = cfg.ssim().unwrap();
    let iterates = vec![u.clone(); cfg.hqs.outer_iters];
    total_loss(&iterates, &u, y, y, y, &mask, &cfg.loss, &fbp, &ssim).unwrap().total
}
