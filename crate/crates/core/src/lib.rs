//! Transferring knowledge between linear predictors on two feature views.
//!
//! The crate fits canonical correlation analysis between a regular view `x`
//! and a privileged view `z`, and uses the resulting coordinates to train
//! students from teachers: single-view distillation, two variants of learning
//! with privileged information, and simultaneous co-regularized training.
//! [`harness`] turns these into reproducible rate sweeps over sample size.

// `!(x > 0.0)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cca;
pub mod data;
pub mod erm;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod stats;
pub mod synth;
pub mod transfer;

pub use data::{LabeledData, PairedSample, View};
pub use error::{Error, Result};
