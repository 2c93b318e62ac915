//! Reproducible scenario runs: TOML configuration in, `report.json` and
//! `series.csv` out.

pub mod config;
pub mod report;
pub mod scenarios;

use thiserror::Error;

pub use config::{Config, ScenarioKind, SimulationConfig};
pub use report::{output_dir, write_outputs, Check, Provenance, Report, SeriesRow, OUTPUT_ENV};
pub use scenarios::{
    run, run_cocycle, run_contraction, run_estimate_suite, run_flow_stability,
    run_noise_continuity, run_positivity_mass, run_vanishing_viscosity,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Pde(#[from] crate::pde::PdeError),
    #[error(transparent)]
    Path(#[from] crate::roughpath::PathError),
    #[error(transparent)]
    Flow(#[from] crate::characteristics::FlowError),
    #[error(transparent)]
    Kinetic(#[from] crate::kinetic::KineticError),
    #[error("shift {shift} exceeds the horizon {horizon}")]
    ShiftBeyondHorizon { shift: f64, horizon: f64 },
    #[error("ladder is not nested: {0}")]
    NotNested(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
