//! Simulation and verification toolkit for Keller-Segel type chemotaxis
//! systems with nonlinear diffusion, logistic sources and prescribed flows.
//!
//! The crate covers finite-volume operators ([`geometry`]), the nonlinearity
//! catalog ([`model`]), a positivity-preserving time integrator ([`solver`]),
//! De Giorgi level-set diagnostics ([`degiorgi`]), sup-bound exponents and
//! certification ([`bounds`]) and long-time analysis ([`stability`]).

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod degiorgi;
pub mod error;
pub mod geometry;
pub mod model;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
pub use geometry::{Grid, ScalarField, VectorField};
pub use model::{ModelSpec, ModelTag};
pub use solver::{RunStatus, SolverConfig, SystemState, Trajectory};
