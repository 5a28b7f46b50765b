//! Numerical laboratory for continuously stratified incompressible flow in
//! isopycnal coordinates with Gent-McWilliams thickness diffusivity.
//!
//! The crate integrates the hydrostatic system and the non-hydrostatic system
//! (with its anisotropic elliptic pressure reconstruction), and provides the
//! diagnostics needed to verify structural identities, energy functionals and
//! the hydrostatic-limit convergence rate at desk scale.
//!
//! Entry points:
//! - [`grid`] / [`field`]: the discrete domain and field calculus,
//! - [`state`]: prognostic states, parameters and background profiles,
//! - [`hydro`] / [`nonhydro`]: time integration of the two systems,
//! - [`pressure`]: the non-hydrostatic pressure boundary-value problem,
//! - [`diagnostics`]: anisotropic Sobolev norms, energies, conservation,
//! - [`experiments`]: scripted parameter sweeps with machine-readable reports,
//! - [`config`] / [`io`]: run configuration and on-disk formats.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod bolus;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod hydro;
pub mod io;
pub mod montgomery;
pub mod nonhydro;
pub mod pressure;
pub mod state;

pub use error::{Error, Result};
pub use field::{ScalarField, SpectralField, VectorField};
pub use grid::Grid;
pub use state::{BackgroundProfile, HydroState, NonHydroState, Params};
