//! Reverse-mode differentiation and the toy networks trained on top of it.

pub mod conv;
pub mod epnet;
pub mod graph;
pub mod linear;
pub mod losses;
pub mod networks;
pub mod params;
pub mod ssim;
pub mod tensor;

pub use epnet::{epnet_forward, epnet_train, EpNet, EpNetConfig, EpNetOutput, TrainConfig, TrainReport};
pub use graph::{Axis, Gradients, Graph, LinearMap, Var};
pub use losses::{ExtrapolationMask, LossTerms, LossWeights};
pub use networks::{Epl, InitCnn, LayerSpec, Network, NetworkSpec, SeNet};
pub use params::{adam_step, AdamConfig, AdamState, ParamId, ParamStore};
pub use ssim::{loss_ssim, ms_ssim, MsSsimConfig};
pub use tensor::Tensor;
