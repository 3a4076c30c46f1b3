//! Stochastic differential game of fish migration.
//!
//! The crate covers the coupled position / relative-velocity SDEs of a fish
//! school, the objective estimator, the LQG surface weight `e^{γ k(l)}`, the
//! quadratic-control HJB equation with its Cole–Hopf linearization and
//! finite-difference solver, the path-integral side (action, localized
//! kernel, Feynman–Kac estimator, wave evolution) and the closed-form
//! strategy of the worked example.
//!
//! Every routine is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64` for everyday use.

pub mod error;
pub mod feynman;
pub mod hjb;
pub mod io;
pub mod lqg;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{sqrt_eight_thirds, Real};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `f64` model parameters.
pub type Params = model::ModelParams<f64>;
/// `f64` school state.
pub type School = model::SchoolState<f64>;
/// `f64` field realization.
pub type Field = lqg::LqgField<f64>;
/// `f64` grid field.
pub type Grid = hjb::ValueGrid<f64>;
/// `f64` path ensemble.
pub type Ensemble = sde::PathEnsemble<f64>;
