//! Undecimated piecewise-linear B-spline tight frame.
//!
//! The 1-D bank is `h0 = [1/4, 1/2, 1/4]`, `h1 = [sqrt2/4, 0, -sqrt2/4]`,
//! `h2 = [-1/4, 1/2, -1/4]`; its tensor products give nine 2-D filters per
//! level. Level `l` uses filters dilated by `2^(l-1)` applied to the previous
//! lowpass. Boundaries use half-sample symmetric reflection
//! (`x[-1] = x[0]`), under which `W^T W = I` holds exactly.

use ndarray::{Array2, Axis};

use crate::error::{dim_err, param_err, Result};
use crate::geometry::Image;

const R2: f64 = std::f64::consts::SQRT_2;

/// The three 1-D filters, taps at offsets -1, 0, +1.
pub const FILTER_BANK: [[f64; 3]; 3] = [
    [0.25, 0.5, 0.25],
    [R2 / 4.0, 0.0, -R2 / 4.0],
    [-0.25, 0.5, -0.25],
];

/// Highpass channels produced at each level.
pub const HIGHPASS_PER_LEVEL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameTransform {
    pub levels: usize,
}

impl Default for FrameTransform {
    fn default() -> Self {
        FrameTransform { levels: 1 }
    }
}

/// Which filter pair and level a coefficient channel came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelTag {
    pub level: usize,
    /// Filter index applied along columns (vertical).
    pub vertical: usize,
    /// Filter index applied along rows (horizontal).
    pub horizontal: usize,
}

/// Coefficients: channel 0 is the coarsest lowpass, followed by
/// `8 * levels` highpass channels ordered by level.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCoeffs {
    pub channels: Vec<Array2<f64>>,
    pub tags: Vec<ChannelTag>,
}

impl FrameCoeffs {
    pub fn zeros(t: &FrameTransform, shape: (usize, usize)) -> Self {
        let tags = t.channel_tags();
        FrameCoeffs {
            channels: vec![Array2::zeros(shape); tags.len()],
            tags,
        }
    }

    pub fn lowpass(&self) -> &Array2<f64> {
        &self.channels[0]
    }

    pub fn highpass(&self) -> &[Array2<f64>] {
        &self.channels[1..]
    }

    pub fn highpass_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.channels[1..]
    }

    pub fn n_highpass(&self) -> usize {
        self.channels.len() - 1
    }

    /// Squared Euclidean norm over all channels.
    pub fn norm_sq(&self) -> f64 {
        self.channels.iter().flatten().map(|v| v * v).sum()
    }

    /// `sum_i |z_i|_1` over highpass channels.
    pub fn highpass_l1(&self) -> f64 {
        self.highpass().iter().flatten().map(|v| v.abs()).sum()
    }
}

/// Index reflected into `0..n` with half-sample symmetry.
#[inline]
fn reflect(mut i: isize, n: isize) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// 1-D filtering along `axis`, or its transpose when `adjoint` is set.
fn filter_axis(src: &Array2<f64>, taps: &[f64; 3], dil: usize, axis: usize, adjoint: bool) -> Array2<f64> {
    let mut out = Array2::zeros(src.dim());
    let n = src.len_of(Axis(axis)) as isize;
    let d = dil as isize;
    for (s_lane, mut o_lane) in src
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        for p in 0..n {
            for (k, &t) in taps.iter().enumerate() {
                if t == 0.0 {
                    continue;
                }
                let q = reflect(p + (k as isize - 1) * d, n);
                if adjoint {
                    o_lane[q] += t * s_lane[p as usize];
                } else {
                    o_lane[p as usize] += t * s_lane[q];
                }
            }
        }
    }
    out
}

impl FrameTransform {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(param_err("frame transform needs at least one level"));
        }
        Ok(FrameTransform { levels })
    }

    /// Number of highpass channels `M`.
    pub fn n_highpass(&self) -> usize {
        HIGHPASS_PER_LEVEL * self.levels
    }

    pub fn n_channels(&self) -> usize {
        self.n_highpass() + 1
    }

    pub fn channel_tags(&self) -> Vec<ChannelTag> {
        let mut tags = vec![ChannelTag {
            level: self.levels,
            vertical: 0,
            horizontal: 0,
        }];
        for level in 1..=self.levels {
            for a in 0..3 {
                for b in 0..3 {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    tags.push(ChannelTag {
                        level,
                        vertical: a,
                        horizontal: b,
                    });
                }
            }
        }
        tags
    }

    /// `W u`, undecimated.
    pub fn decompose(&self, u: &Image) -> Result<FrameCoeffs> {
        if u.data.iter().any(|v| !v.is_finite()) {
            return Err(param_err("frame input contains non-finite values"));
        }
        let mut low = u.data.clone();
        let mut high = Vec::with_capacity(self.n_highpass());
        for level in 1..=self.levels {
            let dil = 1 << (level - 1);
            let mut next_low = None;
            for (a, ha) in FILTER_BANK.iter().enumerate() {
                let v = filter_axis(&low, ha, dil, 0, false);
                for (b, hb) in FILTER_BANK.iter().enumerate() {
                    let c = filter_axis(&v, hb, dil, 1, false);
                    if a == 0 && b == 0 {
                        next_low = Some(c);
                    } else {
                        high.push(c);
                    }
                }
            }
            low = next_low.expect("lowpass channel");
        }
        let mut channels = Vec::with_capacity(self.n_channels());
        channels.push(low);
        channels.extend(high);
        Ok(FrameCoeffs {
            channels,
            tags: self.channel_tags(),
        })
    }

    /// `W^T z`.
    pub fn reconstruct(&self, z: &FrameCoeffs) -> Result<Image> {
        if z.channels.len() != self.n_channels() {
            return Err(dim_err(self.n_channels(), z.channels.len()));
        }
        let shape = z.channels[0].dim();
        if z.channels.iter().any(|c| c.dim() != shape) {
            return Err(param_err("frame channels have inconsistent shapes"));
        }
        let mut low = z.channels[0].clone();
        for level in (1..=self.levels).rev() {
            let dil = 1 << (level - 1);
            let base = 1 + (level - 1) * HIGHPASS_PER_LEVEL;
            let mut acc = Array2::zeros(shape);
            let mut hp = base;
            for (a, ha) in FILTER_BANK.iter().enumerate() {
                let mut row_sum = Array2::zeros(shape);
                for (b, hb) in FILTER_BANK.iter().enumerate() {
                    let c = if a == 0 && b == 0 {
                        &low
                    } else {
                        hp += 1;
                        &z.channels[hp - 1]
                    };
                    row_sum += &filter_axis(c, hb, dil, 1, true);
                }
                acc += &filter_axis(&row_sum, ha, dil, 0, true);
            }
            low = acc;
        }
        Ok(Image { data: low })
    }
}

pub fn frame_decompose(u: &Image, t: &FrameTransform) -> Result<FrameCoeffs> {
    t.decompose(u)
}

pub fn frame_reconstruct(z: &FrameCoeffs, t: &FrameTransform) -> Result<Image> {
    t.reconstruct(z)
}

/// `sgn(x) max(|x| - t, 0)`.
#[inline]
pub fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Elementwise soft-thresholding of the highpass channels. `thresholds`
/// holds one value per highpass channel, or a single value for all of them.
/// The lowpass channel is passed through unchanged.
pub fn soft_threshold(z: &FrameCoeffs, thresholds: &[f64]) -> Result<FrameCoeffs> {
    let m = z.n_highpass();
    if thresholds.len() != 1 && thresholds.len() != m {
        return Err(dim_err(m, thresholds.len()));
    }
    if thresholds.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(param_err("soft-threshold values must be finite and non-negative"));
    }
    let mut out = z.clone();
    for (i, c) in out.highpass_mut().iter_mut().enumerate() {
        let t = if thresholds.len() == 1 { thresholds[0] } else { thresholds[i] };
        c.mapv_inplace(|v| shrink(v, t));
    }
    Ok(out)
}
