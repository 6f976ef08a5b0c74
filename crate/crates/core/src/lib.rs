//! Gated dual-branch salient object detection on a small CPU autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`ops`], [`autodiff`]: rank-4 tensors, kernels and a reverse-mode tape.
//! * [`gradcheck`]: central finite-difference checks for every op and for the whole model.
//! * [`model`]: encoder, transitions, Fold-ASPP, gate units, FPN and parallel branches, losses.
//! * [`metrics`]: PR curve, max F-measure, MAE and S-measure.
//! * [`data`]: synthetic dataset generation, netpbm I/O, augmentation and batching.
//! * [`train`]: SGD with momentum, poly schedule, checkpoints, run logs.
//! * [`cli`]: the `gatenet` command-line front end.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use ops::ConvSpec;
pub use tensor::{DType, Real, Shape, Tensor};
