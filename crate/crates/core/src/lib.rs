//! Dense flow estimation for particle image velocimetry.
//!
//! The crate provides the unsupervised PIV objective (photometric,
//! second-order smoothness and forward/backward consistency losses with
//! analytic gradients), a coarse-to-fine solver that minimizes it directly
//! over the flow field, the Horn–Schunck and window-deformation
//! cross-correlation baselines, a synthetic particle-image generator with
//! exact ground truth, and evaluation tooling.

pub mod config;
pub mod error;
pub mod eval;
pub mod field;
pub mod io;
pub mod loss;
pub mod synth;
pub mod variational;
pub mod warp;
pub mod xcorr;

pub use error::{Error, Result};
pub use field::{build_pyramid, upsample2x_flow, FlowField, GrayImage, Grid, Pyramid};
pub use loss::{LossParams, LossValueGrad};
