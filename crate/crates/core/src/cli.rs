//! The `lact` command line.
//!
//! Exit codes: 0 on success, 2 for invalid arguments, 1 for a runtime
//! failure (the message names the failing stage). `LACT_THREADS` caps the
//! worker pool.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{param_err, Error, Result};
use crate::fbp::{fbp_reconstruct, FilterKind};
use crate::geometry::{forward_project, Image, ScanGeometry, ScanMode, Sinogram};
use crate::hqs::hqs_cg_run;
use crate::io;
use crate::metrics::{evaluate_with, psnr, MetricRow};
use crate::nn::epnet::{epnet_train, EpNet};
use crate::simulate::{add_noise, make_dataset, make_phantom_item, NoiseModel, PhantomKind, PhantomSpec};

#[derive(Parser, Debug)]
#[command(name = "lact", version, about = "Limited-angle CT reconstruction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rasterize a phantom to a tensor file.
    Phantom(PhantomArgs),
    /// Forward-project an image over one-degree views, optionally with noise.
    Project(ProjectArgs),
    /// Filtered backprojection of a sinogram.
    Fbp(FbpArgs),
    /// HQS-CG reconstruction from limited-angle data.
    Hqscg(HqsArgs),
    /// Train the dual-domain network on simulated phantoms.
    Train(TrainArgs),
    /// Reconstruct with a trained network.
    Epnet(EpnetArgs),
    /// Compare a reconstruction with the ground truth and append a CSV row.
    Eval(EvalArgs),
    /// Re-evaluate trained networks on intensity-shifted phantoms.
    ShiftTest(ShiftArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArg {
    /// Run configuration file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GeometryArgs {
    #[arg(long)]
    pub mode: Option<ScanMode>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub detectors: Option<usize>,
    /// Measured range in one-degree views.
    #[arg(long)]
    pub alpha_max: Option<usize>,
    /// Extrapolated views before the measured range.
    #[arg(long)]
    pub n_left: Option<usize>,
    /// Extrapolated views after the measured range.
    #[arg(long)]
    pub n_right: Option<usize>,
    #[arg(long)]
    pub pixel_spacing: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// One value, or one per highpass channel (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
    #[arg(long)]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    pub frame_levels: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct NoiseArgs {
    /// Gaussian std as a fraction of the mean absolute sinogram value.
    #[arg(long)]
    pub gaussian_frac: Option<f64>,
    /// Incident photon count ("inf" disables Poisson noise).
    #[arg(long)]
    pub poisson_i0: Option<f64>,
    /// Skip noise entirely.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub kind: Option<PhantomKind>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of phantoms; more than one is written as a `[count, size, size]` stack.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub intensity_shift: Option<f64>,
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write a 16-bit PGM preview.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mode: Option<ScanMode>,
    /// Number of one-degree views starting at 0.
    #[arg(long)]
    pub views: usize,
    #[arg(long)]
    pub detectors: Option<usize>,
    #[arg(long)]
    pub pixel_spacing: Option<f64>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct FbpArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mode: Option<ScanMode>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub pixel_spacing: Option<f64>,
    #[arg(long)]
    pub filter: Option<FilterKind>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HqsArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Measured sinogram; defaults to the noiseless Shepp-Logan phantom.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epl_pretrain_steps: Option<usize>,
    /// Keep the extrapolator fixed during the main phase.
    #[arg(long)]
    pub freeze_epl: bool,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Start from these parameters (may cover only part of the network).
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EpnetArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Measured sinogram; defaults to the noiseless Shepp-Logan phantom.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value = "run")]
    pub run_id: String,
    #[arg(long, default_value = "unknown")]
    pub method: String,
    #[arg(long, default_value_t = 0)]
    pub alpha_max: usize,
    /// Reconstruction time to record.
    #[arg(long, default_value_t = 0.0)]
    pub seconds: f64,
    /// Requested MS-SSIM scales, lowered for small images.
    #[arg(long, default_value_t = 5)]
    pub ssim_levels: usize,
}

#[derive(Args, Debug)]
pub struct ShiftArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Trained models to compare; `name=path` or just `path`.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    /// Additive intensity offset of the shifted phantoms.
    #[arg(long, default_value_t = 0.1)]
    pub shift: f64,
    #[arg(long, default_value_t = 4)]
    pub items: usize,
    /// Report CSV.
    #[arg(short, long)]
    pub output: PathBuf,
}

/// A runtime failure tagged with the pipeline stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

type CliResult = std::result::Result<(), StageError>;

fn load_config(c: &ConfigArg) -> Result<RunConfig> {
    match &c.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_geometry(cfg: &mut RunConfig, g: &GeometryArgs) {
    let t = &mut cfg.geometry;
    t.mode = g.mode.unwrap_or(t.mode);
    t.size = g.size.unwrap_or(t.size);
    t.detectors = g.detectors.unwrap_or(t.detectors);
    t.alpha_max = g.alpha_max.unwrap_or(t.alpha_max);
    t.n_left = g.n_left.unwrap_or(t.n_left);
    t.n_right = g.n_right.unwrap_or(t.n_right);
    t.pixel_spacing = g.pixel_spacing.unwrap_or(t.pixel_spacing);
}

fn apply_solver(cfg: &mut RunConfig, s: &SolverArgs) {
    let h = &mut cfg.hqs;
    h.lambda = s.lambda.unwrap_or(h.lambda);
    if let Some(g) = &s.gamma {
        h.gamma = g.clone();
    }
    h.beta1 = s.beta1.unwrap_or(h.beta1);
    h.beta2 = s.beta2.unwrap_or(h.beta2);
    h.outer_iters = s.outer_iters.unwrap_or(h.outer_iters);
    h.cg_max_iters = s.cg_max_iters.unwrap_or(h.cg_max_iters);
    h.cg_tol = s.cg_tol.unwrap_or(h.cg_tol);
    h.frame_levels = s.frame_levels.unwrap_or(h.frame_levels);
}

fn apply_noise(cfg: &mut RunConfig, n: &NoiseArgs, seed: u64) {
    if n.noiseless {
        cfg.noise = NoiseModel::noiseless();
    }
    cfg.noise.gaussian_frac = n.gaussian_frac.unwrap_or(cfg.noise.gaussian_frac);
    cfg.noise.poisson_i0 = n.poisson_i0.unwrap_or(cfg.noise.poisson_i0);
    cfg.noise.seed = seed;
}

fn required_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    flag.or(cfg.seed).ok_or_else(|| param_err("--seed is required"))
}

fn value_range(u: &Image) -> (f64, f64) {
    u.as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

fn save_preview(path: &Option<PathBuf>, u: &Image) -> Result<()> {
    if let Some(p) = path {
        let (lo, hi) = value_range(u);
        io::write_pgm(p, u, lo, hi)?;
    }
    Ok(())
}

/// Projection geometry for `views` one-degree views starting at 0.
pub fn full_geometry(
    mode: ScanMode,
    size: usize,
    views: usize,
    detectors: usize,
    pixel_spacing: f64,
) -> Result<ScanGeometry> {
    let g = ScanGeometry::new(mode, (size, size), ScanGeometry::degree_views(views), detectors)?;
    if pixel_spacing == 1.0 {
        Ok(g)
    } else {
        g.with_pixel_spacing(pixel_spacing)
    }
}

/// The measured sinogram given by `input`, or the noiseless projection of
/// the Shepp-Logan phantom.
fn measured_or_default(input: &Option<PathBuf>, cfg: &RunConfig) -> Result<(Sinogram, Option<Image>)> {
    let setup = cfg.geometry.setup()?;
    match input {
        Some(p) => Ok((io::read_sinogram(p)?, None)),
        None => {
            let u = make_phantom_item(&PhantomSpec::shepp_logan(cfg.geometry.size), 0)?;
            Ok((forward_project(&u, &setup.measured)?, Some(u)))
        }
    }
}

fn cmd_phantom(a: &PhantomArgs) -> CliResult {
    let cfg = load_config(&a.config).stage("config")?;
    let seed = required_seed(a.seed, &cfg).stage("arguments")?;
    let mut spec = cfg.phantom_spec(seed);
    spec.kind = a.kind.unwrap_or(spec.kind);
    spec.size = a.size.unwrap_or(spec.size);
    spec.intensity_shift = a.intensity_shift.unwrap_or(spec.intensity_shift);
    let count = a.count.unwrap_or(spec.count);
    spec.count = count;
    let items: Vec<Image> = (0..count)
        .map(|i| make_phantom_item(&spec, i))
        .collect::<Result<_>>()
        .stage("phantom")?;
    if count == 1 {
        io::write_image(&a.output, &items[0]).stage("write")?;
    } else {
        let n = spec.size;
        let data = items.iter().flat_map(|u| u.as_slice().iter().copied()).collect();
        let t = io::TensorFile::new(io::DType::F64, vec![count, n, n], data).stage("write")?;
        io::write_tensor(&a.output, &t).stage("write")?;
    }
    if let Some(p) = &a.pgm {
        let (lo, hi) = items.iter().map(value_range).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (l, h)| (a.min(l), b.max(h)));
        let cols = (count as f64).sqrt().ceil() as usize;
        let grid = io::image_grid(&items, cols, lo, hi).stage("write")?;
        io::write_pgm(p, &grid, lo, hi).stage("write")?;
    }
    Ok(())
}

fn cmd_project(a: &ProjectArgs) -> CliResult {
    let mut cfg = load_config(&a.config).stage("config")?;
    let seed = required_seed(a.seed, &cfg).stage("arguments")?;
    apply_noise(&mut cfg, &a.noise, seed);
    let u = io::read_image(&a.input).stage("read")?;
    let (h, w) = u.shape();
    if h != w {
        return Err(param_err("images must be square")).stage("project");
    }
    let g = full_geometry(
        a.mode.unwrap_or(cfg.geometry.mode),
        h,
        a.views,
        a.detectors.unwrap_or(cfg.geometry.detectors),
        a.pixel_spacing.unwrap_or(cfg.geometry.pixel_spacing),
    )
    .stage("geometry")?;
    let y = forward_project(&u, &g).stage("project")?;
    let y = if cfg.noise.is_noiseless() {
        y
    } else {
        add_noise(&y, &cfg.noise).stage("noise")?
    };
    io::write_sinogram(&a.output, &y).stage("write")
}

fn cmd_fbp(a: &FbpArgs) -> CliResult {
    let mut cfg = load_config(&a.config).stage("config")?;
    cfg.filter.kind = a.filter.unwrap_or(cfg.filter.kind);
    cfg.filter.cutoff = a.cutoff.unwrap_or(cfg.filter.cutoff);
    let y = io::read_sinogram(&a.input).stage("read")?;
    let g = full_geometry(
        a.mode.unwrap_or(cfg.geometry.mode),
        a.size.unwrap_or(cfg.geometry.size),
        y.n_views(),
        y.n_detectors(),
        a.pixel_spacing.unwrap_or(cfg.geometry.pixel_spacing),
    )
    .stage("geometry")?;
    let u = fbp_reconstruct(&y, &g, &cfg.filter).stage("fbp")?;
    io::write_image(&a.output, &u).stage("write")?;
    save_preview(&a.pgm, &u).stage("write")
}

fn cmd_hqscg(a: &HqsArgs) -> CliResult {
    let mut cfg = load_config(&a.config).stage("config")?;
    apply_geometry(&mut cfg, &a.geometry);
    apply_solver(&mut cfg, &a.solver);
    let setup = cfg.geometry.setup().stage("geometry")?;
    let (y, _) = measured_or_default(&a.input, &cfg).stage("read")?;
    let (u, state) = hqs_cg_run(&y, &setup, &cfg.hqs, None).stage("hqs-cg")?;
    eprintln!(
        "hqs-cg: {} outer iterations, objective {:.6e} -> {:.6e}",
        state.iteration,
        state.objective_history[0],
        state.objective_history.last().copied().unwrap_or(f64::NAN)
    );
    io::write_image(&a.output, &u).stage("write")?;
    save_preview(&a.pgm, &u).stage("write")
}

fn training_config(a: &TrainArgs) -> Result<(RunConfig, u64)> {
    let mut cfg = load_config(&a.config)?;
    let seed = required_seed(a.seed, &cfg)?;
    apply_geometry(&mut cfg, &a.geometry);
    apply_solver(&mut cfg, &a.solver);
    apply_noise(&mut cfg, &a.noise, seed);
    cfg.train_items = a.items.unwrap_or(cfg.train_items);
    cfg.train.steps = a.steps.unwrap_or(cfg.train.steps);
    cfg.train.adam.lr = a.lr.unwrap_or(cfg.train.adam.lr);
    cfg.train.epl_pretrain_steps = a.epl_pretrain_steps.unwrap_or(cfg.train.epl_pretrain_steps);
    cfg.train.freeze_epl |= a.freeze_epl;
    cfg.loss.mu = a.mu.unwrap_or(cfg.loss.mu);
    Ok((cfg, seed))
}

fn notice_ssim_levels(cfg: &RunConfig) -> Result<()> {
    let s = cfg.ssim()?;
    if s.levels < cfg.ssim_levels {
        eprintln!(
            "note: {}x{} images support {} MS-SSIM scales; using {} instead of {}",
            cfg.geometry.size, cfg.geometry.size, s.levels, s.levels, cfg.ssim_levels
        );
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let (cfg, seed) = training_config(a).stage("config")?;
    notice_ssim_levels(&cfg).stage("config")?;
    let setup = cfg.geometry.setup().stage("geometry")?;
    let data = make_dataset(cfg.train_items, &cfg.phantom_spec(seed), &setup, &cfg.noise).stage("dataset")?;
    let mut net = EpNet::new(setup, cfg.epnet(seed).stage("config")?).stage("network")?;
    if let Some(p) = &a.init_checkpoint {
        let names = io::checkpoint_load(p, net.params_mut()).stage("checkpoint")?;
        eprintln!("loaded {} parameters from {}", names.len(), p.display());
    }
    let t = Instant::now();
    let report = epnet_train(&mut net, &data, &cfg.train).stage("training")?;
    eprintln!(
        "trained {} steps in {:.1}s: mean loss {:.6e} -> {:.6e} ({:.1}% lower)",
        cfg.train.steps,
        t.elapsed().as_secs_f64(),
        report.initial_mean_loss,
        report.final_mean_loss,
        100.0 * report.relative_reduction()
    );
    io::checkpoint_save(&a.output, net.params()).stage("write")?;
    if let Some(p) = &a.loss_curve {
        io::write_loss_curve(p, &report.pretrain_curve, &report.loss_curve).stage("write")?;
    }
    Ok(())
}

fn load_network(cfg: &RunConfig, checkpoint: &Path) -> Result<EpNet> {
    let mut net = EpNet::new(cfg.geometry.setup()?, cfg.epnet(0)?)?;
    io::checkpoint_load(checkpoint, net.params_mut())?;
    Ok(net)
}

fn cmd_epnet(a: &EpnetArgs) -> CliResult {
    let mut cfg = load_config(&a.config).stage("config")?;
    apply_geometry(&mut cfg, &a.geometry);
    apply_solver(&mut cfg, &a.solver);
    let net = load_network(&cfg, &a.checkpoint).stage("checkpoint")?;
    let (y, _) = measured_or_default(&a.input, &cfg).stage("read")?;
    let out = net.forward(&y).stage("epnet")?;
    io::write_image(&a.output, &out.image).stage("write")?;
    if let Some(p) = &a.pgm {
        // Sinogram-branch image followed by every unrolled iterate.
        let mut panels = vec![out.u_sino.clone()];
        panels.extend(out.hqs.iterates.iter().cloned());
        let (lo, hi) = value_range(&out.image);
        let grid = io::image_grid(&panels, panels.len(), lo, hi).stage("write")?;
        io::write_pgm(p, &grid, lo, hi).stage("write")?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let recon = io::read_image(&a.recon).stage("read")?;
    let gt = io::read_image(&a.gt).stage("read")?;
    let (h, w) = gt.shape();
    let ssim = crate::nn::ssim::MsSsimConfig::with_levels(a.ssim_levels)
        .fitted(h, w)
        .stage("metrics")?;
    let report = evaluate_with(&recon, &gt, &ssim).stage("metrics")?;
    let row = MetricRow {
        run_id: a.run_id.clone(),
        method: a.method.clone(),
        alpha_max: a.alpha_max,
        report,
        seconds: a.seconds,
    };
    println!("{}", row.to_csv());
    io::append_metric_rows(&a.csv, &[row]).stage("write")
}

/// Mean PSNR of a reconstruction method over a dataset.
fn mean_psnr(
    data: &[crate::simulate::DatasetItem],
    mut recon: impl FnMut(&Sinogram) -> Result<Image>,
) -> Result<f64> {
    let mut s = 0.0;
    for item in data {
        let u = recon(&item.y_measured)?;
        let r = crate::metrics::data_range(&item.u_gt)?;
        s += psnr(&u, &item.u_gt, r)?;
    }
    Ok(s / data.len() as f64)
}

/// One model's PSNR on the unshifted and shifted test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftResult {
    pub model: String,
    pub psnr_base: f64,
    pub psnr_shifted: f64,
}

impl ShiftResult {
    pub fn delta(&self) -> f64 {
        self.psnr_shifted - self.psnr_base
    }
}

fn cmd_shift_test(a: &ShiftArgs) -> CliResult {
    let mut cfg = load_config(&a.config).stage("config")?;
    let seed = required_seed(a.seed, &cfg).stage("arguments")?;
    apply_geometry(&mut cfg, &a.geometry);
    apply_solver(&mut cfg, &a.solver);
    apply_noise(&mut cfg, &a.noise, seed);
    let setup = cfg.geometry.setup().stage("geometry")?;
    let base_spec = cfg.phantom_spec(seed);
    let shifted_spec = PhantomSpec {
        intensity_shift: base_spec.intensity_shift + a.shift,
        ..base_spec.clone()
    };
    let base = make_dataset(a.items, &base_spec, &setup, &cfg.noise).stage("dataset")?;
    let shifted = make_dataset(a.items, &shifted_spec, &setup, &cfg.noise).stage("dataset")?;

    let mut results = Vec::new();
    let hqs = |y: &Sinogram| hqs_cg_run(y, &setup, &cfg.hqs, None).map(|r| r.0);
    results.push(ShiftResult {
        model: "hqs-cg".into(),
        psnr_base: mean_psnr(&base, hqs).stage("hqs-cg")?,
        psnr_shifted: mean_psnr(&shifted, hqs).stage("hqs-cg")?,
    });
    for spec in &a.checkpoints {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (spec.clone(), PathBuf::from(spec)),
        };
        let net = load_network(&cfg, &path).stage("checkpoint")?;
        let run = |y: &Sinogram| net.forward(y).map(|o| o.image);
        results.push(ShiftResult {
            model: name,
            psnr_base: mean_psnr(&base, run).stage("epnet")?,
            psnr_shifted: mean_psnr(&shifted, run).stage("epnet")?,
        });
    }
    let mut text = String::from("model,psnr_base_db,psnr_shifted_db,delta_db\n");
    for r in &results {
        text.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.model, r.psnr_base, r.psnr_shifted, r.delta()));
    }
    io::atomic_write(&a.output, text.as_bytes()).stage("write")?;
    print!("{text}");
    let mut order: Vec<&ShiftResult> = results.iter().collect();
    order.sort_by(|x, y| y.delta().total_cmp(&x.delta()));
    let names: Vec<&str> = order.iter().map(|r| r.model.as_str()).collect();
    println!("ordering by PSNR delta (most robust first): {}", names.join(" > "));
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("LACT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, e.g. on a second call in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let result = match &cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Project(a) => cmd_project(a),
        Command::Fbp(a) => cmd_fbp(a),
        Command::Hqscg(a) => cmd_hqscg(a),
        Command::Train(a) => cmd_train(a),
        Command::Epnet(a) => cmd_epnet(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ShiftTest(a) => cmd_shift_test(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) if e.stage == "arguments" => {
            eprintln!("error: {}", e.source);
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
