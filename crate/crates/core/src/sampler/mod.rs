//! Langevin sampling of the grand-canonical, canonical and block-conditional
//! ensembles, plus the estimators built on top of it.

pub mod chain;
pub mod estimate;

pub use chain::{
    burn_in, drive, run_chain, sample, Chain, ChainConfig, ConstraintSpec, ProposalKind, SampleRun,
    CONSTRAINT_TOLERANCE,
};
pub use estimate::{
    check_moment_bound, covariance_of_series, equivalence_of_observables_check, estimate_covariance,
    estimate_covariance_with, estimate_moment, fit_correlation_decay, mean_spin_variance, DecayFit,
    EquivalenceReport, MomentBoundCheck,
};
