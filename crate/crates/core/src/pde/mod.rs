//! Classical solvers for the 2-D anisotropic heat equation
//! `du/dt = ax d2u/dx2 + ay d2u/dy2`, used as ground truth for the neural
//! layers.
//!
//! Grids are stored row-major as `[Nx, Ny]`: the first index runs along `x`,
//! the second along `y`.

mod fdm;
mod field;
mod fourier;
pub mod io;
mod spectrum;

pub use fdm::{fdm_solve, fdm_step, superposition_check, FdmConfig};
pub use field::TemperatureField;
pub use fourier::{eval_fourier, fit_fourier, FourierSolution};
pub use spectrum::{field_spectrum, harmonic_spectrum, Nonlinearity, Spectrum};
