//! Simulation of closed-loop machine control over a private 5G link with a
//! deterministic ring underlay.
//!
//! Numeric state is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod channel;
pub mod harness;
pub mod plant;
pub mod ring;
pub mod scalar;
pub mod sim;
pub mod spectrum;

pub use channel::{Channel, ChannelProfile, DeliveryRecord, JitterDistribution};
pub use harness::{ExperimentConfig, HarnessError, RunManifest, SweepMatrix, SweepSpec, VerdictClass};
pub use plant::{FailCause, LoopPair, Outcome, PlantError, TrialReport};
pub use ring::{MasterNode, NodeId, Ring, RingConfig, RingId};
pub use scalar::Scalar;
pub use sim::{Model, RngStream, Scheduler, SimTime, TraceLog};
pub use spectrum::{Decision, GrantId, SpectrumError, SpectrumRequest};

pub type Axis = plant::AxisModel<f64>;
pub type AxisParams = plant::AxisParams<f64>;
pub type Controller = plant::Controller<f64>;
pub type PidGains = plant::PidGains<f64>;
pub type LoopConfig = plant::LoopConfig<f64>;
pub type Trajectory = plant::Trajectory<f64>;
pub type TrialSetup = plant::TrialSetup<f64>;
pub type TrialVerdict = plant::TrialVerdict<f64>;
pub type Scenario = harness::Scenario<f64>;
pub type SpectrumManager = spectrum::SpectrumManager<f64>;
pub type CoverageArea = spectrum::CoverageArea<f64>;
pub type Band = spectrum::Band<f64>;
pub type DelayStats = channel::DelayStats<f64>;
