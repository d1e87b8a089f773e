//! Quad-modal single-object tracking with multiscale selective-scan fusion.
//!
//! RGB, thermal, event and language token streams are fused by a block that
//! serializes the concatenated tokens along four scan orders, runs one
//! selective state-space scan per order, and merges the results with a gate.
//! The crate also ships everything needed to exercise that block at desk
//! scale: a small autodiff engine, a one-stream toy tracker, a synthetic
//! quad-modal sequence generator and one-pass-evaluation metrics.

pub mod bbox;
pub mod error;
pub mod eval;
pub mod mfm;
pub mod numerics;
pub mod scanorders;
pub mod ssm;
pub mod synthdata;
pub mod tracker;

pub use error::{Error, Result};
