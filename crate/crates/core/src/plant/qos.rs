use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

/// Service requirements a network must meet for a traffic class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    pub max_latency: SimTime,
    pub max_jitter: SimTime,
    pub max_loss_rate: f64,
}

/// End-to-end latency window for closed-loop machine control.
pub const URLLC_LATENCY_MIN: SimTime = SimTime::from_micros(500);
pub const URLLC_LATENCY_MAX: SimTime = SimTime::from_micros(10_000);
pub const URLLC_LOSS_MAX: f64 = 1e-9;

/// Observed link behaviour to check a profile against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedQos {
    pub latency: SimTime,
    pub jitter: SimTime,
    pub loss_rate: f64,
}

impl QosProfile {
    /// Closed-loop control class: 2 ms latency, 0.2 ms jitter, loss 1e-9.
    pub fn urllc() -> Self {
        QosProfile {
            max_latency: SimTime::from_micros(2_000),
            max_jitter: SimTime::from_micros(200),
            max_loss_rate: 1e-9,
        }
    }

    /// Sensor integration ring: looser bounds than the control loop.
    pub fn sensor() -> Self {
        QosProfile {
            max_latency: SimTime::from_millis(10),
            max_jitter: SimTime::from_millis(2),
            max_loss_rate: 1e-6,
        }
    }

    /// Non-mission-critical overlay traffic.
    pub fn relaxed() -> Self {
        QosProfile {
            max_latency: SimTime::from_millis(100),
            max_jitter: SimTime::from_millis(20),
            max_loss_rate: 1e-3,
        }
    }

    /// A profile qualifies as URLLC when its latency bound lies in the
    /// 0.5–10 ms window and its loss bound is at most 1e-9.
    pub fn is_urllc(&self) -> bool {
        (URLLC_LATENCY_MIN..=URLLC_LATENCY_MAX).contains(&self.max_latency)
            && self.max_loss_rate <= URLLC_LOSS_MAX
    }

    pub fn is_mission_critical(&self) -> bool {
        self.is_urllc()
    }

    pub fn satisfied_by(&self, observed: &ObservedQos) -> bool {
        observed.latency <= self.max_latency
            && observed.jitter <= self.max_jitter
            && observed.loss_rate <= self.max_loss_rate
    }
}
