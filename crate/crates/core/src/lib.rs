//! Non-exemplar continual learning across a stream of EEG subjects.
//!
//! The engine trains a compact convolutional encoder and an MLP classifier
//! subject by subject. Knowledge from earlier subjects survives only as a
//! per-class prototype memory, a frozen teacher snapshot, or (for the EWC
//! baseline) a diagonal Fisher estimate; no past trial is ever replayed.
//!
//! Module map:
//!
//! - [`datastream`]: trial tensors, the synthetic subject-shift generator and
//!   the `EEGB` v1 trial file format.
//! - [`netcore`]: encoder/classifier with hand-written reverse-mode gradients,
//!   optimizers, a finite-difference oracle and `PNCK` checkpoints.
//! - [`prototypes`]: class prototypes and the EMA prototype memory.
//! - [`losses`]: cross-entropy, prototype consistency, subject alignment,
//!   feature distillation and the EWC penalty.
//! - [`trainer`]: base and incremental phases for each method.
//! - [`metrics`]: accuracy matrices, BWT/ACC, multi-seed aggregation and
//!   embedding export.
//! - [`cli`]: the configuration-driven `synth`/`run`/`gradcheck`/`report`
//!   commands.

pub mod cli;
pub mod datastream;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod prototypes;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
