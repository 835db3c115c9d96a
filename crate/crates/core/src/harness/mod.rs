//! Configuration, orchestration and persistence of the convergence studies.

pub mod config;
pub mod report;
pub mod studies;

pub use config::{ExperimentConfig, InitialKind, ModelSource, StudyKind, StudyParams, TwoScaleInputs};
pub use report::{emit_plot_data, persist_report, table_schemas, write_atomic, CriterionResult, ExperimentReport, Table};
pub use studies::{is_gaussian, run, RunOptions};
