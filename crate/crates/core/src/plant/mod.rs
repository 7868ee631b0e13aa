//! Networked machine-tool axis: plant dynamics, position controller,
//! reference trajectories and the closed-loop trial.

mod axis;
mod pid;
mod qos;
mod trajectory;
mod trial;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::ring::RingError;

pub use axis::{step_axis, AxisModel, AxisParams};
pub use pid::{Controller, PidGains, PidTerms};
pub use qos::{ObservedQos, QosProfile, URLLC_LATENCY_MAX, URLLC_LATENCY_MIN, URLLC_LOSS_MAX};
pub use trajectory::{Trajectory, Trapezoid};
pub use trial::{
    run_trial, write_trial_csv, AdaptationProfile, ChannelPair, FailCause, InitConfig, LoopConfig,
    LoopPair, Outcome, SensorSetup, Topology, TraceSample, TrialReport, TrialSetup, TrialVerdict,
};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("trace export failed: {0}")]
    Export(String),
}
