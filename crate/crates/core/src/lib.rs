//! ECG biometrics toolkit: signal conditioning, heartbeat segmentation, a small
//! trainable 1D convolutional embedding network, triplet-family losses
//! (including keyed "secure" and stochastic variants), and evaluation of
//! verification accuracy, cancelability, unlinkability and information leakage.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod embed_net;
pub mod error;
pub mod eval_metrics;
pub mod explain;
pub mod features;
pub mod fiducial;
pub mod io;
pub mod losses;
pub mod matching;
pub mod pipeline;
pub mod rng;
pub mod security_eval;
pub mod signal;
mod stats;
pub mod synth;
pub mod triplet_gen;
pub mod update_cascade;

pub use error::{Error, Result};
pub use signal::Signal;
