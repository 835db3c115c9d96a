//! Microscopic, mesoscopic and macroscopic evolutions.

pub mod meso;
pub mod operator;
pub mod pde;
pub mod sde;

pub use meso::{integrate_meso, CoarseOperator, MesoMode, MesoOdeConfig, MesoTrajectory};
pub use operator::KawasakiOperator;
pub use pde::{solve_cyclic_tridiagonal, solve_macro_pde, MacroFlux, MacroPdeConfig, MacroTrajectory};
pub use sde::{
    kawasaki_step, simulate_ensemble, time_average, Checkpoint, InitialLaw, KawasakiStepper, Profile, SdeConfig,
    Stepping, TrajectoryEnsemble,
};
