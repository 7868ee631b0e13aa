//! Experiment harness: sweeps, calibration, spectrum scripts and rendering.

pub mod calibrate;
pub mod config;
pub mod render;
pub mod script;
pub mod sweep;

use thiserror::Error;

use crate::plant::PlantError;
use crate::spectrum::SpectrumError;

pub use calibrate::{calibrate, CalibrationFailure, CalibrationReport, CalibrationSpace};
pub use config::{ExperimentConfig, RunManifest};
pub use render::{parse_matrix_csv, render_matrix, Format};
pub use script::{run_spectrum_scenario, ScenarioLog, ScriptEvent, SpectrumScript};
pub use sweep::{
    confusion, evaluate_cell, reference_table, run_sweep, CellVerdict, EvalOrder, Scenario, SeedOutcome,
    SweepMatrix, SweepSpec, VerdictClass,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
