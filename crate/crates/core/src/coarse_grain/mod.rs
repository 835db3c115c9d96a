//! Block decompositions and the coarse-grained Hamiltonian on the block-mean
//! hyperplane.

pub mod hbar;
pub mod scheme;

pub use hbar::{
    aux_gap, directional_second_difference, hbar_y_aux, hbar_y_aux_gradient, hbar_y_gradient, hbar_y_hessian,
    hbar_y_hessian_entry, BlockSampler, GradientEstimate, HessianDump, HessianEntry,
};
pub use scheme::{BlockScheme, MesoState};
