//! Free energies of the grand-canonical and canonical ensembles.

pub mod constrained;
pub mod curve;
pub mod mc;
pub mod transfer;

pub use constrained::{hbar_n, log_hyperplane_integral, ConstrainedGrid};
pub use curve::{
    cramer_gap, default_sigma_grid, legendre, sigma_grid, CoarseGrainedCurve, CramerGap, Derivatives,
    FreeEnergyCurve, FreeEnergySource, LegendreResult, Provenance,
};
pub use transfer::{a_limit, a_n, a_n_density, subadditivity_defect};
pub use transfer::gce_site_moments;
