//! Fixed-step ODE solvers enhanced by a learned compensation term.
//!
//! A coarse explicit step `u + S(f, u, dt) dt` is corrected by a small dense
//! network fed with the integration term `S` itself. The crate contains the
//! benchmark systems, the classical schemes and step variants, the network
//! with exact gradients, dataset generation and storage, training, and the
//! experiment drivers used to evaluate the corrected solvers.

mod binfmt;
pub mod data;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod solvers;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
