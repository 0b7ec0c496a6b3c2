//! Fronthaul quantization-noise shaping for training-based time and phase
//! synchronization in the uplink of a cloud RAN.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal_model`]: system parameters, the zero-excess-bandwidth pulse,
//!   polyphase responses and pilot/data frame synthesis.
//! - [`metrics`]: fronthaul rates, Cramer-Rao bounds, the piecewise-linear
//!   pulse coefficients and the effective SNR.
//! - [`psd_optimizer`]: the Charnes-Cooper / difference-of-convex optimizer of
//!   the pilot quantization-noise spectrum, plus the white baseline.
//! - [`quantizer`]: additive Gaussian and scalar uniform fronthaul compression.
//! - [`link_sim`]: the joint least-squares estimator, compensation, detection
//!   and the Monte Carlo experiments.
//!
//! Monte Carlo trials run on rayon when the `parallel` feature is enabled
//! (the default); see [`exec`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod grid;
pub mod link_sim;
pub mod metrics;
pub mod psd_optimizer;
pub mod quantizer;
pub mod signal_model;

pub use error::{Error, Result};
pub use grid::Grid;
pub use metrics::{CrbPair, InvPsdGrid, LinearApproxCoeffs};
pub use signal_model::{Constellation, SystemConfig};
