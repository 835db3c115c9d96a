//! Multiscale toolkit for one-dimensional lattice spin systems under the
//! conservative Kawasaki dynamics.

pub mod coarse_grain;
pub mod dynamics;
pub mod error;
pub mod free_energy;
pub mod harness;
pub mod interp;
pub mod lsi;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use model::{InteractionKernel, ModelSpec, PotentialSpec, SpinConfiguration};
