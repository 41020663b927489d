//! Structured state-space sequence models (S4, S4D, robust S4D with
//! Butterworth-initialized filtering layers) and a shallow recurrent decoder
//! for reconstructing a flow field from a drifting sensor.
//!
//! Module map:
//! - [`numerics`]: complex linear algebra, FFT, Vandermonde and Cauchy sums
//! - [`hippo`]: HiPPO-LegS matrix and its normal/diagonal-plus-low-rank forms
//! - [`kernel`]: discretization, convolution kernels, recurrence
//! - [`init`]: diagonal initializations, transfer functions, H2 norms
//! - [`s4dc`]: minimal-H2 constrained training via shifted power iteration
//! - [`autodiff`], [`model`]: the trainable SHRED-(r)S4D network
//! - [`gyre`]: double-gyre flow, sensor advection, datasets

pub mod autodiff;
pub mod error;
pub mod gyre;
pub mod hippo;
pub mod init;
pub mod kernel;
pub mod model;
pub mod numerics;
pub mod s4dc;
pub mod train;

pub use error::{Error, Result};
