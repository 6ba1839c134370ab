//! Conditional difference adversarial autoencoder for facial expression
//! synthesis.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`graph`], [`kernels`], [`optim`]: dense tensors, reverse-mode
//!   autodiff and Adam.
//! * [`model`]: the staged encoder/decoder, both discriminators and the loss terms.
//! * [`data`]: manifests, pairing samplers, image I/O and the synthetic face renderer.
//! * [`train`]: the alternating adversarial training loop, configs and checkpoints.
//! * [`eval`]: manifold grids, interpolation, comparison strips and desk-scale metrics.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod labels;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use labels::{Emotion, LabelMode, LabelVector};
pub use model::{LossBundle, LossWeights, ModelParams, SkipPosition, Z_DIM};
pub use optim::AdamState;
pub use tensor::{Scalar, Tensor};
