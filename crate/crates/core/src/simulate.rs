//! Phantoms, the mixed Poisson/Gaussian noise model and dataset synthesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{param_err, Error, Result};
use crate::geometry::{Ellipse, Image, LimitedAngleSetup, Projector, Sinogram};

/// Sub-samples per pixel side when rasterizing ellipses.
const SUPERSAMPLE: usize = 4;

/// Modified Shepp-Logan table: intensity, semi-axis x, semi-axis y, center x,
/// center y, rotation (degrees), in coordinates normalized to `[-1, 1]`.
pub const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp-logan" => Ok(PhantomKind::SheppLogan),
            "random-ellipses" => Ok(PhantomKind::RandomEllipses),
            other => Err(param_err(format!("unknown phantom kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub count: usize,
    pub intensity_shift: f64,
    pub size: usize,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn shepp_logan(size: usize) -> Self {
        PhantomSpec {
            kind: PhantomKind::SheppLogan,
            count: 1,
            intensity_shift: 0.0,
            size,
            seed: 0,
        }
    }

    pub fn random_ellipses(size: usize, count: usize, seed: u64) -> Self {
        PhantomSpec {
            kind: PhantomKind::RandomEllipses,
            count,
            intensity_shift: 0.0,
            size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(param_err("phantom size must be at least 32"));
        }
        if self.count == 0 {
            return Err(param_err("phantom count must be at least 1"));
        }
        if !self.intensity_shift.is_finite() {
            return Err(param_err("intensity shift must be finite"));
        }
        Ok(())
    }
}

/// The Shepp-Logan ellipses scaled to an image of `size` pixels of unit pitch.
pub fn shepp_logan_ellipses(size: usize) -> Vec<Ellipse> {
    let half = 0.5 * size as f64;
    SHEPP_LOGAN
        .iter()
        .map(|r| Ellipse {
            center: (r[3] * half, r[4] * half),
            semi_axes: (r[1] * half, r[2] * half),
            rotation_deg: r[5],
            intensity: r[0],
        })
        .collect()
}

/// Between 3 and 8 ellipses: one body ellipse and smaller inserts, all inside
/// the field of view.
pub fn random_ellipses(size: usize, rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let half = 0.5 * size as f64;
    let count = rng.random_range(3..=8);
    let mut out = Vec::with_capacity(count);
    out.push(Ellipse {
        center: (rng.random_range(-0.05..0.05) * half, rng.random_range(-0.05..0.05) * half),
        semi_axes: (rng.random_range(0.6..0.8) * half, rng.random_range(0.6..0.8) * half),
        rotation_deg: rng.random_range(0.0..180.0),
        intensity: rng.random_range(0.3..0.6),
    });
    for _ in 1..count {
        let a: f64 = rng.random_range(0.06..0.3);
        let b = rng.random_range(0.06..0.3);
        let reach = 0.55 - a.max(b);
        let r = rng.random_range(0.0..reach.max(0.01));
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        out.push(Ellipse {
            center: (r * phi.cos() * half, r * phi.sin() * half),
            semi_axes: (a * half, b * half),
            rotation_deg: rng.random_range(0.0..180.0),
            intensity: rng.random_range(0.05..0.4),
        });
    }
    out
}

/// Rasterizes ellipses (summed intensities) with `SUPERSAMPLE`^2 samples per pixel.
pub fn rasterize(ellipses: &[Ellipse], size: usize) -> Image {
    let mut img = Image::zeros(size, size);
    let c = 0.5 * (size as f64 - 1.0);
    let ss = SUPERSAMPLE as f64;
    for ((i, j), v) in img.data.indexed_iter_mut() {
        let mut acc = 0.0;
        for si in 0..SUPERSAMPLE {
            for sj in 0..SUPERSAMPLE {
                let x = j as f64 - c + (sj as f64 + 0.5) / ss - 0.5;
                let y = c - i as f64 - (si as f64 + 0.5) / ss + 0.5;
                for e in ellipses {
                    if e.contains(x, y) {
                        acc += e.intensity;
                    }
                }
            }
        }
        *v = acc / (ss * ss);
    }
    img
}

fn item_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The phantom with index `item` of a spec (index 0 for single phantoms).
pub fn make_phantom_item(spec: &PhantomSpec, item: usize) -> Result<Image> {
    spec.validate()?;
    let ellipses = match spec.kind {
        PhantomKind::SheppLogan => shepp_logan_ellipses(spec.size),
        PhantomKind::RandomEllipses => random_ellipses(spec.size, &mut item_rng(spec.seed, item as u64)),
    };
    let mut img = rasterize(&ellipses, spec.size);
    if spec.intensity_shift != 0.0 {
        img.data.mapv_inplace(|v| v + spec.intensity_shift);
    }
    Ok(img)
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Image> {
    make_phantom_item(spec, 0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Gaussian std as a fraction of the mean absolute sinogram value.
    pub gaussian_frac: f64,
    /// Incident photon count; `f64::INFINITY` disables Poisson noise.
    pub poisson_i0: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            gaussian_frac: 0.05,
            poisson_i0: 5e6,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            gaussian_frac: 0.0,
            poisson_i0: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_frac >= 0.0 && self.gaussian_frac.is_finite()) {
            return Err(param_err("gaussian_frac must be finite and non-negative"));
        }
        if !(self.poisson_i0 > 0.0) {
            return Err(param_err("poisson_i0 must be positive"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.gaussian_frac == 0.0 && self.poisson_i0.is_infinite()
    }
}

/// Poisson counts in the transmission domain followed by additive Gaussian
/// noise with std `gaussian_frac * mean(|y|)`.
pub fn add_noise(y: &Sinogram, nm: &NoiseModel) -> Result<Sinogram> {
    add_noise_stream(y, nm, 0)
}

pub fn add_noise_stream(y: &Sinogram, nm: &NoiseModel, stream: u64) -> Result<Sinogram> {
    nm.validate()?;
    let mut rng = item_rng(nm.seed, stream);
    let n = y.data.len().max(1) as f64;
    let sigma = nm.gaussian_frac * y.data.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mut out = y.clone();
    if nm.poisson_i0.is_finite() {
        let i0 = nm.poisson_i0;
        for v in out.data.iter_mut() {
            let mean = i0 * (-v.max(0.0)).exp();
            let counts = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| param_err(format!("poisson rate {mean}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            *v = -(counts.max(1.0) / i0).ln();
        }
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| param_err(e.to_string()))?;
        for v in out.data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// One simulated acquisition.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub u_gt: Image,
    /// Noisy measured rows.
    pub y_measured: Sinogram,
    /// Clean sinogram over the extended views.
    pub y_gt_extended: Sinogram,
}

pub fn simulate_item(
    u_gt: Image,
    setup: &LimitedAngleSetup,
    projector: &Projector,
    noise: &NoiseModel,
    stream: u64,
) -> Result<DatasetItem> {
    let clean = projector.forward(&u_gt)?;
    let noisy = if noise.is_noiseless() {
        clean.clone()
    } else {
        add_noise_stream(&clean, noise, stream)?
    };
    Ok(DatasetItem {
        u_gt,
        y_measured: setup.selector.select(&noisy)?,
        y_gt_extended: clean,
    })
}

/// Per item: phantom, noisy measured sinogram, clean extended sinogram.
pub fn make_dataset(
    n_items: usize,
    phantom: &PhantomSpec,
    setup: &LimitedAngleSetup,
    noise: &NoiseModel,
) -> Result<Vec<DatasetItem>> {
    if phantom.size != setup.extended.image_size.0 || phantom.size != setup.extended.image_size.1 {
        return Err(param_err("phantom size does not match the scan geometry"));
    }
    let projector = Projector::new(setup.extended.clone())?;
    (0..n_items)
        .map(|i| {
            let u = make_phantom_item(phantom, i)?;
            simulate_item(u, setup, &projector, noise, i as u64)
        })
        .collect()
}
