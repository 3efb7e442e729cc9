//! Excursion-set percolation for planar stationary Gaussian fields.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernels`]: covariance kernels, their Fourier transforms and the
//!   lattice convolution square root `eta` with `eta * eta = kappa(eps .)`.
//! * [`lattice`]: the face-centered square lattice clipped to rectangles
//!   and square annuli.
//! * [`sampler`]: field samplers (convolution with white noise, truncated
//!   Hermite series) and their cross-validation.
//! * [`percolation`]: colorings, crossing / arm / circuit events and Monte
//!   Carlo crossing estimates.
//! * [`influence`]: Gaussian influences, the Russo-type derivative formula
//!   and KKL-type diagnostics.
//! * [`sprinkling`]: fold events and the coarse/fine sprinkled crossing gap.
//! * [`experiments`]: threshold sweeps, logit curves, decay fits and
//!   run records used by the CLI.
//! * [`io`]: square-root cache, field dumps, CSV tables and manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod experiments;
pub mod fft2;
pub mod influence;
pub mod io;
pub mod kernels;
pub mod lattice;
pub mod percolation;
pub mod rng;
pub mod sampler;
pub mod sprinkling;
pub mod stats;

pub use error::{Error, Result};
pub use kernels::{Kernel, SqrtKernel};
pub use lattice::{Region, RegionGraph};
pub use percolation::{ColoredConfig, MCEstimate};
pub use sampler::FieldSample;
