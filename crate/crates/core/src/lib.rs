//! Hop-aware supervised graph attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode gradient tape and Adam.
//! - [`graph`]: graph container, hop-distance matrices, label subsampling,
//!   label-consistency statistics and a stochastic block model generator.
//! - [`hop_codec`]: sinusoidal hop-value encoding tables.
//! - [`attention`]: baseline GAT and hop-aware attention layers and models.
//! - [`supervision`]: ground-truth attention targets, pair sampling and the
//!   attention MSE loss.
//! - [`schedule`]: temperature decay and the loss mixing weight.
//! - [`train`]: experiment configuration, training loop, metrics and
//!   analysis helpers used by the command-line front end.

pub mod attention;
pub mod error;
pub mod graph;
pub mod hop_codec;
pub mod schedule;
pub mod supervision;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
