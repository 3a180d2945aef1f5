//! Limited-angle CT reconstruction toolkit.
//!
//! The crate covers the whole pipeline for reconstructing images from
//! projections acquired over a restricted angular range:
//!
//! - [`geometry`]: parallel/fan-beam scan geometry, a Joseph-style forward
//!   projector with its exact transpose, and the view-selection operator.
//! - [`fbp`]: ramp filtering, filtered backprojection and the Radon
//!   inversion layer (FBP as a fixed linear map with an exact adjoint).
//! - [`framelet`]: the undecimated piecewise-linear B-spline tight frame
//!   and soft-thresholding.
//! - [`hqs`]: half-quadratic splitting with conjugate gradient, including
//!   the extended-sinogram consistency terms.
//! - [`nn`]: a small reverse-mode autodiff graph, toy extrapolation /
//!   enhancement / initialization networks, losses, MS-SSIM and Adam.
//! - [`simulate`], [`metrics`], [`io`], [`config`], [`cli`]: phantoms and noise, PSNR and
//!   MS-SSIM reporting, binary tensor / checkpoint formats, run configuration
//!   files and the batch CLI.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod cli;
pub mod config;
pub mod error;
pub mod fbp;
pub mod framelet;
pub mod geometry;
pub mod hqs;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod simulate;

pub use error::{Error, Result};
pub use geometry::{AngleSelector, Image, Projector, ScanGeometry, ScanMode, Sinogram};
