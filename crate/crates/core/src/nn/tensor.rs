use crate::error::{dim_err, param_err, Result};
use crate::geometry::{Image, Sinogram};

/// Dense `C x H x W` array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 3], v: f64) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(dim_err(shape, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: [1, 1, 1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2];
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.shape[1] * self.shape[2];
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn from_image(u: &Image) -> Self {
        let (h, w) = u.shape();
        Tensor {
            shape: [1, h, w],
            data: u.as_slice().to_vec(),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        if self.shape[0] != 1 {
            return Err(param_err(format!("expected one channel, got {}", self.shape[0])));
        }
        Image::from_vec(self.shape[1], self.shape[2], self.data.clone())
    }

    pub fn from_sinogram(y: &Sinogram) -> Self {
        let (v, d) = y.shape();
        Tensor {
            shape: [1, v, d],
            data: y.as_slice().to_vec(),
        }
    }

    pub fn to_sinogram(&self) -> Result<Sinogram> {
        if self.shape[0] != 1 {
            return Err(param_err(format!("expected one channel, got {}", self.shape[0])));
        }
        let a = ndarray::Array2::from_shape_vec((self.shape[1], self.shape[2]), self.data.clone())
            .map_err(|_| dim_err(self.shape, self.data.len()))?;
        Sinogram::from_array(a)
    }
}
