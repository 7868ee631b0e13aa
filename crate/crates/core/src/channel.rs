//! Delay, jitter and loss impairment between two loop endpoints, in the
//! manner of a kernel network emulator stage.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("loss rate {0} outside [0, 1]")]
    InvalidLossRate(f64),
    #[error("no delivery records to summarise")]
    EmptyRecords,
    #[error("failed to write delivery trace: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JitterDistribution {
    /// Uniform over `[-jitter, +jitter]`.
    #[default]
    Uniform,
    /// Normal with standard deviation `jitter / 2`, truncated to `±jitter`.
    TruncatedNormal,
}

/// Per-direction impairment. `jitter` is the half-width of the symmetric
/// perturbation around `mean_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub mean_delay: SimTime,
    pub jitter: SimTime,
    #[serde(default)]
    pub distribution: JitterDistribution,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub reorder_allowed: bool,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ChannelProfile {
    /// No delay, no jitter, no loss.
    pub fn ideal() -> Self {
        ChannelProfile {
            mean_delay: SimTime::ZERO,
            jitter: SimTime::ZERO,
            distribution: JitterDistribution::Uniform,
            loss_rate: 0.0,
            reorder_allowed: false,
        }
    }

    pub fn from_millis(mean_ms: f64, jitter_ms: f64) -> Self {
        ChannelProfile {
            mean_delay: SimTime::from_millis_f64(mean_ms),
            jitter: SimTime::from_millis_f64(jitter_ms),
            ..Self::ideal()
        }
    }

    /// Relaxed overlay uplink used for bridged, non-critical traffic.
    pub fn overlay_default() -> Self {
        ChannelProfile::from_millis(10.0, 2.0)
    }

    pub fn with_loss(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate;
        self
    }

    pub fn with_distribution(mut self, distribution: JitterDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_reorder(mut self, allowed: bool) -> Self {
        self.reorder_allowed = allowed;
        self
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if (0.0..=1.0).contains(&self.loss_rate) {
            Ok(())
        } else {
            Err(ChannelError::InvalidLossRate(self.loss_rate))
        }
    }

    /// Smallest and largest delay the profile can apply.
    pub fn support(&self) -> (SimTime, SimTime) {
        (
            self.mean_delay.saturating_sub(self.jitter),
            self.mean_delay + self.jitter,
        )
    }

    pub fn is_ideal(&self) -> bool {
        self.mean_delay == SimTime::ZERO && self.jitter == SimTime::ZERO && self.loss_rate == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub frame_id: u64,
    pub sent: SimTime,
    /// `None` when the frame was dropped.
    pub delivered: Option<SimTime>,
    /// Zero for dropped frames.
    pub applied_delay: SimTime,
}

impl DeliveryRecord {
    pub fn dropped(&self) -> bool {
        self.delivered.is_none()
    }
}

/// One direction of an impaired link.
#[derive(Debug, Clone)]
pub struct Channel {
    profile: ChannelProfile,
    jitter_rng: RngStream,
    loss_rng: RngStream,
    truncated: Option<(Normal, f64, f64)>,
    watermark: SimTime,
}

impl Channel {
    pub fn new(
        profile: ChannelProfile,
        jitter_rng: RngStream,
        loss_rng: RngStream,
    ) -> Result<Self, ChannelError> {
        profile.validate()?;
        let truncated = match profile.distribution {
            JitterDistribution::Uniform => None,
            JitterDistribution::TruncatedNormal => {
                let n = Normal::new(0.0, 0.5).expect("unit-scale normal is valid");
                let lo = n.cdf(-1.0);
                let hi = n.cdf(1.0);
                Some((n, lo, hi))
            }
        };
        Ok(Channel {
            profile,
            jitter_rng,
            loss_rng,
            truncated,
            watermark: SimTime::ZERO,
        })
    }

    pub fn profile(&self) -> &ChannelProfile {
        &self.profile
    }

    /// Normalised perturbation in `[-1, 1]`. Consumes exactly one draw.
    fn draw_offset(&mut self) -> f64 {
        let u = self.jitter_rng.unit();
        match &self.truncated {
            None => 2.0 * u - 1.0,
            Some((n, lo, hi)) => n.inverse_cdf(lo + u * (hi - lo)).clamp(-1.0, 1.0),
        }
    }

    /// Every call consumes one loss draw and one jitter draw, so the k-th
    /// frame always sees the same normalised perturbation for a given seed.
    pub fn transmit(&mut self, frame_id: u64, now: SimTime) -> DeliveryRecord {
        let lost = self.loss_rng.bernoulli(self.profile.loss_rate);
        let offset = self.draw_offset();
        if lost {
            return DeliveryRecord {
                frame_id,
                sent: now,
                delivered: None,
                applied_delay: SimTime::ZERO,
            };
        }
        let jitter = self.profile.jitter.as_micros() as f64;
        let raw = self.profile.mean_delay.as_micros() as i64 + (jitter * offset).round() as i64;
        let mut delivered = now + SimTime::from_micros(raw.max(0) as u64);
        if !self.profile.reorder_allowed {
            delivered = delivered.max(self.watermark);
            self.watermark = delivered;
        }
        DeliveryRecord {
            frame_id,
            sent: now,
            delivered: Some(delivered),
            applied_delay: delivered - now,
        }
    }
}

/// Summary of applied delays in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats<T> {
    pub mean: T,
    pub p99: T,
    pub max: T,
    pub min: T,
    pub loss_fraction: T,
    pub delivered: usize,
    pub dropped: usize,
}

/// Mean, 99th percentile (nearest rank), extremes and loss fraction over
/// the delivered records. With nothing delivered the delay fields are zero.
pub fn empirical_stats<T: Scalar>(records: &[DeliveryRecord]) -> Result<DelayStats<T>, ChannelError> {
    if records.is_empty() {
        return Err(ChannelError::EmptyRecords);
    }
    let mut delays: Vec<u64> = records
        .iter()
        .filter(|r| !r.dropped())
        .map(|r| r.applied_delay.as_micros())
        .collect();
    let dropped = records.len() - delays.len();
    let loss_fraction = T::of(dropped as f64 / records.len() as f64);
    if delays.is_empty() {
        return Ok(DelayStats {
            mean: T::zero(),
            p99: T::zero(),
            max: T::zero(),
            min: T::zero(),
            loss_fraction,
            delivered: 0,
            dropped,
        });
    }
    delays.sort_unstable();
    let n = delays.len();
    let sum: u128 = delays.iter().map(|&d| d as u128).sum();
    let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
    Ok(DelayStats {
        mean: T::of(sum as f64 / n as f64),
        p99: T::of(delays[rank - 1] as f64),
        max: T::of(delays[n - 1] as f64),
        min: T::of(delays[0] as f64),
        loss_fraction,
        delivered: n,
        dropped,
    })
}

#[derive(Serialize)]
struct DeliveryRow {
    frame_id: u64,
    sent_us: u64,
    delivered_us: Option<u64>,
    delay_us: u64,
    dropped: bool,
}

/// CSV columns: `frame_id,sent_us,delivered_us,delay_us,dropped`.
pub fn write_delivery_csv<W: Write>(records: &[DeliveryRecord], out: W) -> Result<(), ChannelError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(DeliveryRow {
            frame_id: r.frame_id,
            sent_us: r.sent.as_micros(),
            delivered_us: r.delivered.map(SimTime::as_micros),
            delay_us: r.applied_delay.as_micros(),
            dropped: r.dropped(),
        })
        .map_err(|e| ChannelError::Export(e.to_string()))?;
    }
    w.flush().map_err(|e| ChannelError::Export(e.to_string()))
}
