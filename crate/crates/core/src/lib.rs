//! Dynamically expandable spiking networks for class-incremental learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`param`], [`tape`] — dense f64 tensors, a parameter store
//!   with masked/frozen momentum SGD, and a reverse-mode tape.
//! * [`snn`] — LIF dynamics with triangular surrogate gradients, spiking
//!   extractors and the linear readout.
//! * [`cil`] — task streams, network expansion with parameter freezing,
//!   cross-block suppression masks, herding exemplar memory.
//! * [`losses`] — temporal-efficient classification loss, auxiliary head
//!   loss, distillation, and the correction applied to new-class logits.
//! * [`align`] — the feedback controller that adapts the logit correction
//!   magnitude between fine-tuning epochs.
//! * [`data`], [`config`] — synthetic task generation, dataset i/o, and the
//!   flat key=value experiment configuration.
//! * [`train`], [`metrics`], [`report`], [`checkpoint`] — the two-stage
//!   incremental trainer, evaluation metrics, run artifacts, and resumable
//!   checkpoints.

pub mod align;
pub mod checkpoint;
pub mod cil;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod param;
pub mod report;
pub mod rng;
pub mod snn;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
