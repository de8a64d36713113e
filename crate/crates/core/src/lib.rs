//! Heat-conduction neural layers with classical PDE oracles.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode tape.
//! * [`pde`]: finite-difference and Fourier-series heat solvers.
//! * [`hc`] and [`ra`]: the heat-conduction and refinement layers.
//! * [`model`]: the four-stage backbone built from those layers.
//! * [`train`]: datasets, optimizers, checkpoints and the training loop.
//! * [`verify`]: property suites shared by the tests and the CLI.

pub mod error;
pub mod gradcheck;
pub mod params;
pub mod pde;
pub mod tensor;
pub mod config;
pub mod hc;
pub mod ra;
pub mod model;
pub mod train;
pub mod verify;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::{PaddingMode, Real, Tensor};
