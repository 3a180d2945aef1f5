//! Fixed linear operators usable as graph nodes.

use std::sync::Arc;

use ndarray::Array2;

use super::graph::LinearMap;
use super::tensor::Tensor;
use crate::error::{dim_err, Result};
use crate::fbp::Fbp;
use crate::framelet::{FrameCoeffs, FrameTransform};
use crate::geometry::Projector;
use crate::hqs::HqsProblem;

fn check(t: &Tensor, shape: [usize; 3]) -> Result<()> {
    if t.shape() != shape {
        return Err(dim_err(shape, t.shape()));
    }
    Ok(())
}

/// The Radon inversion layer: sinogram to image through filtered
/// backprojection, with the exact transpose as its backward pass.
pub struct RilMap {
    fbp: Arc<Fbp>,
}

impl RilMap {
    pub fn new(fbp: Arc<Fbp>) -> Self {
        RilMap { fbp }
    }
}

impl LinearMap for RilMap {
    fn in_shape(&self) -> [usize; 3] {
        let (v, d) = self.fbp.geometry().sinogram_shape();
        [1, v, d]
    }

    fn out_shape(&self) -> [usize; 3] {
        let (h, w) = self.fbp.geometry().image_size;
        [1, h, w]
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        check(x, self.in_shape())?;
        Ok(Tensor::from_image(&self.fbp.apply(&x.to_sinogram()?)?))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check(y, self.out_shape())?;
        Ok(Tensor::from_sinogram(&self.fbp.adjoint(&y.to_image()?)?))
    }
}

/// The forward projector: image to sinogram.
pub struct ProjectorMap {
    projector: Arc<Projector>,
}

impl ProjectorMap {
    pub fn new(projector: Arc<Projector>) -> Self {
        ProjectorMap { projector }
    }
}

impl LinearMap for ProjectorMap {
    fn in_shape(&self) -> [usize; 3] {
        let (h, w) = self.projector.geometry().image_size;
        [1, h, w]
    }

    fn out_shape(&self) -> [usize; 3] {
        let (v, d) = self.projector.geometry().sinogram_shape();
        [1, v, d]
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        check(x, self.in_shape())?;
        Ok(Tensor::from_sinogram(&self.projector.forward(&x.to_image()?)?))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check(y, self.out_shape())?;
        Ok(Tensor::from_image(&self.projector.adjoint(&y.to_sinogram()?)?))
    }
}

/// Frame analysis: `[1, H, W]` to `[channels, H, W]`.
pub struct FrameMap {
    frame: FrameTransform,
    size: (usize, usize),
}

impl FrameMap {
    pub fn new(frame: FrameTransform, size: (usize, usize)) -> Self {
        FrameMap { frame, size }
    }
}

impl LinearMap for FrameMap {
    fn in_shape(&self) -> [usize; 3] {
        [1, self.size.0, self.size.1]
    }

    fn out_shape(&self) -> [usize; 3] {
        [self.frame.n_channels(), self.size.0, self.size.1]
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        check(x, self.in_shape())?;
        let z = self.frame.decompose(&x.to_image()?)?;
        let data = z.channels.iter().flat_map(|c| c.iter().copied()).collect();
        Tensor::from_vec(self.out_shape(), data)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check(y, self.out_shape())?;
        let (h, w) = self.size;
        let channels = (0..self.frame.n_channels())
            .map(|c| Array2::from_shape_vec((h, w), y.plane(c).to_vec()).expect("plane shape"))
            .collect();
        let z = FrameCoeffs {
            channels,
            tags: self.frame.channel_tags(),
        };
        Ok(Tensor::from_image(&self.frame.reconstruct(&z)?))
    }
}

/// The symmetric normal-equation operator of the image update.
pub struct HqsSystemMap {
    problem: Arc<HqsProblem>,
}

impl HqsSystemMap {
    pub fn new(problem: Arc<HqsProblem>) -> Self {
        HqsSystemMap { problem }
    }
}

impl LinearMap for HqsSystemMap {
    fn in_shape(&self) -> [usize; 3] {
        let (h, w) = self.problem.image_size();
        [1, h, w]
    }

    fn out_shape(&self) -> [usize; 3] {
        self.in_shape()
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        check(x, self.in_shape())?;
        Ok(Tensor::from_image(&self.problem.system_apply(&x.to_image()?)?))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.apply(y)
    }
}

/// Separable Gaussian filtering of every channel without padding:
/// `[C, H, W]` to `[C, H - k + 1, W - k + 1]`.
pub struct GaussianValid {
    taps: Vec<f64>,
    in_shape: [usize; 3],
}

/// Normalized Gaussian window of `size` taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = 0.5 * (size as f64 - 1.0);
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

impl GaussianValid {
    pub fn new(size: usize, sigma: f64, in_shape: [usize; 3]) -> Self {
        GaussianValid {
            taps: gaussian_window(size, sigma),
            in_shape,
        }
    }

    fn k(&self) -> usize {
        self.taps.len()
    }
}

impl LinearMap for GaussianValid {
    fn in_shape(&self) -> [usize; 3] {
        self.in_shape
    }

    fn out_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.in_shape;
        [c, (h + 1).saturating_sub(self.k()), (w + 1).saturating_sub(self.k())]
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        check(x, self.in_shape)?;
        let [c, _, w] = self.in_shape;
        let [_, ho, wo] = self.out_shape();
        let k = self.k();
        let mut out = Tensor::zeros(self.out_shape());
        let mut tmp = vec![0.0; ho * w];
        for ch in 0..c {
            let src = x.plane(ch);
            tmp.fill(0.0);
            for i in 0..ho {
                for (t, &g) in self.taps.iter().enumerate() {
                    let s = &src[(i + t) * w..(i + t + 1) * w];
                    for (d, v) in tmp[i * w..(i + 1) * w].iter_mut().zip(s) {
                        *d += g * v;
                    }
                }
            }
            let dst = out.plane_mut(ch);
            for i in 0..ho {
                for j in 0..wo {
                    dst[i * wo + j] = (0..k).map(|t| self.taps[t] * tmp[i * w + j + t]).sum();
                }
            }
        }
        Ok(out)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check(y, self.out_shape())?;
        let [c, _, w] = self.in_shape;
        let [_, ho, wo] = self.out_shape();
        let mut out = Tensor::zeros(self.in_shape);
        let mut tmp = vec![0.0; ho * w];
        for ch in 0..c {
            let g = y.plane(ch);
            tmp.fill(0.0);
            for i in 0..ho {
                for j in 0..wo {
                    let v = g[i * wo + j];
                    for (t, &a) in self.taps.iter().enumerate() {
                        tmp[i * w + j + t] += a * v;
                    }
                }
            }
            let dst = out.plane_mut(ch);
            for i in 0..ho {
                for (t, &a) in self.taps.iter().enumerate() {
                    let row = &tmp[i * w..(i + 1) * w];
                    for (d, v) in dst[(i + t) * w..(i + t + 1) * w].iter_mut().zip(row) {
                        *d += a * v;
                    }
                }
            }
        }
        Ok(out)
    }
}
