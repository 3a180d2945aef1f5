//! Layer-list network descriptions and the three toy networks: the
//! three-branch sinogram extrapolator, the sinogram enhancer and the U-Net
//! that fuses both domains into the conjugate-gradient starting point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Axis, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Result};

/// Largest extended angular coverage, in one-degree views.
pub const MAX_EXTENDED_VIEWS: usize = 180;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        relu: bool,
        /// Start from zero weights instead of He-normal.
        zero_init: bool,
    },
    /// 2x2 mean pooling.
    Down,
    /// Nearest upsampling to the spatial size of the most recent skip.
    Up,
    /// Remember the current activation.
    SkipPush,
    /// Pop the most recent skip and concatenate it after the current channels.
    SkipConcat,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, relu: bool) -> Self {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel: 3,
            relu,
            zero_init: false,
        }
    }

    pub fn conv_zero(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel: 3,
            relu: false,
            zero_init: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Plain conv stack `in -> width -> ... -> out` with `depth` layers, the
    /// last one linear and zero-initialized.
    pub fn plain(in_ch: usize, width: usize, out_ch: usize, depth: usize) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut c = in_ch;
        for _ in 0..depth.saturating_sub(1) {
            layers.push(LayerSpec::conv(c, width, true));
            c = width;
        }
        layers.push(LayerSpec::conv_zero(c, out_ch));
        NetworkSpec { layers }
    }

    /// Two-level encoder-decoder with one skip connection.
    pub fn unet(in_ch: usize, width: usize, out_ch: usize) -> Self {
        let w2 = 2 * width;
        NetworkSpec {
            layers: vec![
                LayerSpec::conv(in_ch, width, true),
                LayerSpec::conv(width, width, true),
                LayerSpec::SkipPush,
                LayerSpec::Down,
                LayerSpec::conv(width, w2, true),
                LayerSpec::conv(w2, w2, true),
                LayerSpec::Up,
                LayerSpec::SkipConcat,
                LayerSpec::conv(w2 + width, width, true),
                LayerSpec::conv_zero(width, out_ch),
            ],
        }
    }

    /// Output shape for an input of `shape`, checking every channel count
    /// and the skip wiring.
    pub fn output_shape(&self, shape: [usize; 3]) -> Result<[usize; 3]> {
        let mut cur = shape;
        let mut skips: Vec<[usize; 3]> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Conv {
                    in_ch, out_ch, kernel, ..
                } => {
                    if in_ch != cur[0] {
                        return Err(param_err(format!(
                            "layer {i}: expects {in_ch} channels, receives {}",
                            cur[0]
                        )));
                    }
                    if kernel % 2 == 0 || out_ch == 0 {
                        return Err(param_err(format!("layer {i}: invalid kernel or width")));
                    }
                    cur[0] = out_ch;
                }
                LayerSpec::Down => {
                    cur[1] = cur[1].div_ceil(2);
                    cur[2] = cur[2].div_ceil(2);
                }
                LayerSpec::Up => {
                    let s = skips
                        .last()
                        .ok_or_else(|| param_err(format!("layer {i}: upsampling without a skip")))?;
                    if s[1].div_ceil(2) != cur[1] || s[2].div_ceil(2) != cur[2] {
                        return Err(param_err(format!("layer {i}: upsampling size mismatch")));
                    }
                    cur[1] = s[1];
                    cur[2] = s[2];
                }
                LayerSpec::SkipPush => skips.push(cur),
                LayerSpec::SkipConcat => {
                    let s = skips
                        .pop()
                        .ok_or_else(|| param_err(format!("layer {i}: concat without a skip")))?;
                    if s[1..] != cur[1..] {
                        return Err(dim_err(s, cur));
                    }
                    cur[0] += s[0];
                }
            }
        }
        if !skips.is_empty() {
            return Err(param_err("unconsumed skip connection"));
        }
        Ok(cur)
    }
}

/// A network bound to parameters `{name}.{layer}.weight` / `.bias`.
#[derive(Clone, Debug)]
pub struct Network {
    name: String,
    spec: NetworkSpec,
    /// Weight and bias ids for each conv layer, `None` for the others.
    params: Vec<Option<(ParamId, ParamId)>>,
}

impl Network {
    /// Registers freshly initialized parameters in `store`.
    pub fn new(name: &str, spec: NetworkSpec, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            if let LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                zero_init,
                ..
            } = *l
            {
                let fan_in = in_ch * kernel * kernel;
                let mut w = Tensor::zeros([out_ch, in_ch, kernel * kernel]);
                if !zero_init {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).map_err(|e| param_err(e.to_string()))?;
                    for v in w.data_mut() {
                        *v = dist.sample(&mut rng);
                    }
                }
                let wid = store.insert(format!("{name}.{i}.weight"), w)?;
                let bid = store.insert(format!("{name}.{i}.bias"), Tensor::zeros([out_ch, 1, 1]))?;
                params.push(Some((wid, bid)));
            } else {
                params.push(None);
            }
        }
        Ok(Network {
            name: name.to_string(),
            spec,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.iter().flatten().flat_map(|&(w, b)| [w, b])
    }

    pub fn set_frozen(&self, store: &mut ParamStore, frozen: bool) {
        for id in self.param_ids() {
            store.set_frozen(id, frozen);
        }
    }

    pub fn is_frozen(&self, store: &ParamStore) -> bool {
        self.param_ids().all(|id| store.entry(id).frozen)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.spec.output_shape(g.value(x).shape())?;
        let mut cur = x;
        let mut skips = Vec::new();
        for (l, p) in self.spec.layers.iter().zip(&self.params) {
            cur = match *l {
                LayerSpec::Conv { relu, .. } => {
                    let (wid, bid) = p.expect("conv params");
                    let w = g.param(store, wid);
                    let b = g.param(store, bid);
                    let y = g.conv2d(cur, w, b)?;
                    if relu {
                        g.relu(y)
                    } else {
                        y
                    }
                }
                LayerSpec::Down => g.avg_pool2(cur),
                LayerSpec::Up => {
                    let s: Var = *skips.last().expect("checked wiring");
                    let [_, h, w] = g.value(s).shape();
                    g.upsample2(cur, h, w)?
                }
                LayerSpec::SkipPush => {
                    skips.push(cur);
                    cur
                }
                LayerSpec::SkipConcat => {
                    let s = skips.pop().expect("checked wiring");
                    g.concat(&[cur, s], Axis::Channel)?
                }
            };
        }
        Ok(cur)
    }
}

/// Channel width of the toy networks.
pub const TOY_WIDTH: usize = 16;
/// Conv layers per extrapolation branch and in the enhancer.
pub const TOY_DEPTH: usize = 3;

/// Three-branch sinogram extrapolator.
#[derive(Clone, Debug)]
pub struct Epl {
    pub left: Network,
    pub middle: Network,
    pub right: Network,
    n_left: usize,
    n_right: usize,
}

impl Epl {
    pub fn new(store: &mut ParamStore, n_left: usize, n_right: usize, seed: u64) -> Result<Self> {
        let spec = NetworkSpec::plain(1, TOY_WIDTH, 1, TOY_DEPTH);
        Ok(Epl {
            left: Network::new("epl.left", spec.clone(), store, seed)?,
            middle: Network::new("epl.middle", spec.clone(), store, seed.wrapping_add(1))?,
            right: Network::new("epl.right", spec, store, seed.wrapping_add(2))?,
            n_left,
            n_right,
        })
    }

    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn networks(&self) -> [&Network; 3] {
        [&self.left, &self.middle, &self.right]
    }

    pub fn set_frozen(&self, store: &mut ParamStore, frozen: bool) {
        for n in self.networks() {
            n.set_frozen(store, frozen);
        }
    }

    pub fn is_frozen(&self, store: &ParamStore) -> bool {
        self.networks().iter().all(|n| n.is_frozen(store))
    }

    /// `y` is `[1, views, detectors]`; the output has
    /// `views + n_left + n_right` rows ordered `[left; middle; right]`.
    /// Each side branch sees the measured rows nearest its edge, mirrored
    /// about that edge.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, y: Var) -> Result<Var> {
        let [c, views, _] = g.value(y).shape();
        if c != 1 {
            return Err(dim_err(1, c));
        }
        if views + self.n_left + self.n_right > MAX_EXTENDED_VIEWS {
            return Err(param_err(format!(
                "{views} measured plus {} extrapolated views exceed {MAX_EXTENDED_VIEWS}",
                self.n_left + self.n_right
            )));
        }
        if self.n_left > views || self.n_right > views {
            return Err(param_err("cannot extrapolate more views than are measured"));
        }
        let mut parts = Vec::with_capacity(3);
        if self.n_left > 0 {
            let edge = g.slice(y, Axis::Row, 0, self.n_left)?;
            let edge = g.flip_rows(edge);
            parts.push(self.left.forward(g, store, edge)?);
        }
        let r = self.middle.forward(g, store, y)?;
        parts.push(g.add(y, r)?);
        if self.n_right > 0 {
            let edge = g.slice(y, Axis::Row, views - self.n_right, self.n_right)?;
            let edge = g.flip_rows(edge);
            parts.push(self.right.forward(g, store, edge)?);
        }
        g.concat(&parts, Axis::Row)
    }
}

/// Residual sinogram enhancer.
#[derive(Clone, Debug)]
pub struct SeNet {
    pub net: Network,
}

impl SeNet {
    pub fn new(store: &mut ParamStore, seed: u64) -> Result<Self> {
        Ok(SeNet {
            net: Network::new("senet", NetworkSpec::plain(1, TOY_WIDTH, 1, TOY_DEPTH), store, seed)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, y: Var) -> Result<Var> {
        let r = self.net.forward(g, store, y)?;
        g.add(y, r)
    }
}

/// Residual U-Net over the image-branch and sinogram-branch reconstructions.
#[derive(Clone, Debug)]
pub struct InitCnn {
    pub net: Network,
}

impl InitCnn {
    pub fn new(store: &mut ParamStore, seed: u64) -> Result<Self> {
        Ok(InitCnn {
            net: Network::new("initcnn", NetworkSpec::unet(2, TOY_WIDTH, 1), store, seed)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, u_img: Var, u_sino: Var) -> Result<Var> {
        let a = g.value(u_img).shape();
        let b = g.value(u_sino).shape();
        if a != b || a[0] != 1 {
            return Err(dim_err(a, b));
        }
        let x = g.concat(&[u_img, u_sino], Axis::Channel)?;
        let r = self.net.forward(g, store, x)?;
        g.add(u_img, r)
    }
}
