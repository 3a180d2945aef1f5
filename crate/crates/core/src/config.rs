//! Run configuration: a flat `key = value` file with `[section]` headers.
//!
//! ```text
//! [geometry]
//! mode = fan
//! size = 128
//! alpha_max = 90
//!
//! [hqs]
//! gamma = 1.0
//! outer_iters = 5
//! ```
//!
//! `#` starts a comment. Unknown sections and keys are rejected.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fbp::{FilterKind, FilterSpec};
use crate::geometry::{LimitedAngleSetup, ScanMode};
use crate::hqs::HqsConfig;
use crate::nn::epnet::{EpNetConfig, TrainConfig};
use crate::nn::losses::LossWeights;
use crate::nn::params::AdamConfig;
use crate::nn::ssim::MsSsimConfig;
use crate::simulate::{NoiseModel, PhantomKind, PhantomSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryConfig {
    pub mode: ScanMode,
    pub size: usize,
    pub detectors: usize,
    /// Measured angular range in one-degree views.
    pub alpha_max: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub pixel_spacing: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            mode: ScanMode::Fan,
            size: 128,
            detectors: 800,
            alpha_max: 90,
            n_left: 15,
            n_right: 15,
            pixel_spacing: 1.0,
        }
    }
}

impl GeometryConfig {
    pub fn setup(&self) -> Result<LimitedAngleSetup> {
        let s = LimitedAngleSetup::one_degree(
            self.mode,
            (self.size, self.size),
            self.detectors,
            self.alpha_max,
            self.n_left,
            self.n_right,
        )?;
        if self.pixel_spacing == 1.0 {
            return Ok(s);
        }
        LimitedAngleSetup::new(s.extended.with_pixel_spacing(self.pixel_spacing)?, s.selector)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub run_id: String,
    pub geometry: GeometryConfig,
    pub phantom_kind: PhantomKind,
    /// Phantoms per generated set.
    pub phantom_count: usize,
    pub intensity_shift: f64,
    pub noise: NoiseModel,
    pub filter: FilterSpec,
    pub hqs: HqsConfig,
    pub train_items: usize,
    pub train: TrainConfig,
    pub loss: LossWeights,
    /// Requested MS-SSIM scales; lowered automatically for small images.
    pub ssim_levels: usize,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            run_id: "run".into(),
            geometry: GeometryConfig::default(),
            phantom_kind: PhantomKind::RandomEllipses,
            phantom_count: 1,
            intensity_shift: 0.0,
            noise: NoiseModel::default(),
            filter: FilterSpec::default(),
            hqs: HqsConfig::default(),
            train_items: 32,
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            ssim_levels: 5,
            input: None,
            output: None,
        }
    }
}

const SECTIONS: [&str; 8] = ["run", "geometry", "phantom", "noise", "fbp", "hqs", "train", "loss"];

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value `{v}` for `{key}`"),
    })
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse_num(line, key, v),
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("invalid boolean `{v}` for `{key}`"),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    line,
                    message: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown section [{name}]"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let sec = section.as_deref().ok_or_else(|| Error::Config {
                line,
                message: "key outside of any section".into(),
            })?;
            cfg.set(line, sec, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, line: usize, section: &str, key: &str, v: &str) -> Result<()> {
        let unknown = || Error::Config {
            line,
            message: format!("unknown key `{key}` in section [{section}]"),
        };
        let bad = |e: Error| Error::Config {
            line,
            message: e.to_string(),
        };
        match section {
            "run" => match key {
                "seed" => self.seed = Some(parse_num(line, key, v)?),
                "run_id" => self.run_id = v.to_string(),
                "input" => self.input = Some(PathBuf::from(v)),
                "output" => self.output = Some(PathBuf::from(v)),
                _ => return Err(unknown()),
            },
            "geometry" => {
                let g = &mut self.geometry;
                match key {
                    "mode" => g.mode = v.parse().map_err(bad)?,
                    "size" => g.size = parse_num(line, key, v)?,
                    "detectors" => g.detectors = parse_num(line, key, v)?,
                    "alpha_max" => g.alpha_max = parse_num(line, key, v)?,
                    "n_left" => g.n_left = parse_num(line, key, v)?,
                    "n_right" => g.n_right = parse_num(line, key, v)?,
                    "pixel_spacing" => g.pixel_spacing = parse_f64(line, key, v)?,
                    _ => return Err(unknown()),
                }
            }
            "phantom" => match key {
                "kind" => self.phantom_kind = v.parse().map_err(bad)?,
                "count" => self.phantom_count = parse_num(line, key, v)?,
                "intensity_shift" => self.intensity_shift = parse_f64(line, key, v)?,
                _ => return Err(unknown()),
            },
            "noise" => match key {
                "gaussian_frac" => self.noise.gaussian_frac = parse_f64(line, key, v)?,
                "poisson_i0" => self.noise.poisson_i0 = parse_f64(line, key, v)?,
                "seed" => self.noise.seed = parse_num(line, key, v)?,
                _ => return Err(unknown()),
            },
            "fbp" => match key {
                "filter" => self.filter.kind = v.parse::<FilterKind>().map_err(bad)?,
                "cutoff" => self.filter.cutoff = parse_f64(line, key, v)?,
                _ => return Err(unknown()),
            },
            "hqs" => {
                let h = &mut self.hqs;
                match key {
                    "lambda" => h.lambda = parse_f64(line, key, v)?,
                    "gamma" => {
                        h.gamma = v
                            .split(',')
                            .map(|s| parse_f64(line, key, s.trim()))
                            .collect::<Result<_>>()?
                    }
                    "beta1" => h.beta1 = parse_f64(line, key, v)?,
                    "beta2" => h.beta2 = parse_f64(line, key, v)?,
                    "outer_iters" => h.outer_iters = parse_num(line, key, v)?,
                    "cg_max_iters" => h.cg_max_iters = parse_num(line, key, v)?,
                    "cg_tol" => h.cg_tol = parse_f64(line, key, v)?,
                    "frame_levels" => h.frame_levels = parse_num(line, key, v)?,
                    _ => return Err(unknown()),
                }
            }
            "train" => match key {
                "items" => self.train_items = parse_num(line, key, v)?,
                "steps" => self.train.steps = parse_num(line, key, v)?,
                "lr" => self.train.adam.lr = parse_f64(line, key, v)?,
                "epl_pretrain_steps" => self.train.epl_pretrain_steps = parse_num(line, key, v)?,
                "freeze_epl" => self.train.freeze_epl = parse_bool(line, key, v)?,
                _ => return Err(unknown()),
            },
            "loss" => match key {
                "mu" => self.loss.mu = parse_f64(line, key, v)?,
                "ssim_levels" => self.ssim_levels = parse_num(line, key, v)?,
                _ => return Err(unknown()),
            },
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown section [{section}]"),
                })
            }
        }
        Ok(())
    }

    /// Desk-scale training run: 64x64 fan beam, 90 measured one-degree
    /// views plus 15 extrapolated on each side, 96 detector bins.
    ///
    /// Pixels are 1/64 wide so line integrals stay O(1), and CG is cut to
    /// five iterations so the learned initialization still matters.
    pub fn toy_training(seed: u64) -> Self {
        let mut cfg = RunConfig {
            seed: Some(seed),
            run_id: "toy".into(),
            ..RunConfig::default()
        };
        cfg.geometry = GeometryConfig {
            size: 64,
            detectors: 96,
            pixel_spacing: 1.0 / 64.0,
            ..GeometryConfig::default()
        };
        cfg.hqs.cg_max_iters = 5;
        cfg.noise.seed = seed;
        cfg.phantom_count = cfg.train_items;
        cfg
    }

    pub fn phantom_spec(&self, seed: u64) -> PhantomSpec {
        PhantomSpec {
            kind: self.phantom_kind,
            count: self.phantom_count,
            intensity_shift: self.intensity_shift,
            size: self.geometry.size,
            seed,
        }
    }

    /// MS-SSIM settings with the scale count fitted to the image size.
    pub fn ssim(&self) -> Result<MsSsimConfig> {
        let s = self.geometry.size;
        MsSsimConfig::with_levels(self.ssim_levels).fitted(s, s)
    }

    pub fn epnet(&self, seed: u64) -> Result<EpNetConfig> {
        Ok(EpNetConfig {
            hqs: self.hqs.clone(),
            filter: self.filter,
            loss: self.loss,
            ssim: self.ssim()?,
            seed,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        self.train.adam
    }
}
