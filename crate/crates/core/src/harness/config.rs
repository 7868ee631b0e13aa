//! TOML experiment configuration and run manifests.
//!
//! Every section and field is optional; missing values take the defaults
//! used throughout the crate. Units are spelled out in field names.
//!
//! ```toml
//! [sweep]
//! latencies_ms = [0.5, 1, 1.5, 2, 3, 5]
//! jitters_ms = [0.05, 0.1, 0.15, 0.2, 0.3]
//! seeds_per_cell = 3
//! trial_length_s = 60
//! order = "descending-severity"
//!
//! [loops.adapted]
//! watchdog_us = 1550
//! init_grace_ms = 5000
//!
//! [channel]
//! distribution = "truncated-normal"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelProfile, JitterDistribution};
use crate::plant::{AxisParams, LoopConfig, LoopPair, PidGains, Trajectory, Trapezoid};
use crate::plant::{InitConfig, SensorSetup, Topology};
use crate::ring::{NodeId, RingConfig, RingId};
use crate::sim::SimTime;
use crate::spectrum::{Band, CoverageArea, SpectrumRequest};

use super::calibrate::CalibrationSpace;
use super::script::{ScriptAction, ScriptStep, SpectrumScript};
use super::sweep::{Scenario, SweepSpec};
use super::HarnessError;

/// Overrides for one loop profile; unset fields keep the profile's stock value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub kd: Option<f64>,
    pub integral_clamp: Option<f64>,
    pub servo_period_us: Option<u64>,
    pub watchdog_us: Option<u64>,
    pub init_grace_ms: Option<u64>,
    pub following_error_mm: Option<f64>,
    pub init_transactions: Option<u32>,
    pub jitter_tolerance_us: Option<u64>,
    pub verify_factor: Option<u32>,
}

impl LoopSection {
    pub fn apply(&self, base: LoopConfig<f64>) -> LoopConfig<f64> {
        let g = base.gains;
        LoopConfig {
            profile: base.profile,
            servo_period: self.servo_period_us.map_or(base.servo_period, SimTime::from_micros),
            watchdog_timeout: self.watchdog_us.map_or(base.watchdog_timeout, SimTime::from_micros),
            init_grace: self.init_grace_ms.map_or(base.init_grace, SimTime::from_millis),
            following_error_limit: self.following_error_mm.unwrap_or(base.following_error_limit),
            gains: PidGains {
                kp: self.kp.unwrap_or(g.kp),
                ki: self.ki.unwrap_or(g.ki),
                kd: self.kd.unwrap_or(g.kd),
                integral_clamp: self.integral_clamp.unwrap_or(g.integral_clamp),
            },
            init: InitConfig {
                transactions: self.init_transactions.unwrap_or(base.init.transactions),
                jitter_tolerance: self.jitter_tolerance_us.map_or(base.init.jitter_tolerance, SimTime::from_micros),
                verify_factor: self.verify_factor.unwrap_or(base.init.verify_factor),
            },
        }
    }

    /// A section that pins every field to `lc`. Sub-millisecond grace
    /// values are rounded to the millisecond.
    pub fn pinned(lc: &LoopConfig<f64>) -> Self {
        LoopSection {
            kp: Some(lc.gains.kp),
            ki: Some(lc.gains.ki),
            kd: Some(lc.gains.kd),
            integral_clamp: Some(lc.gains.integral_clamp),
            servo_period_us: Some(lc.servo_period.as_micros()),
            watchdog_us: Some(lc.watchdog_timeout.as_micros()),
            init_grace_ms: Some(lc.init_grace.as_micros() / 1000),
            following_error_mm: Some(lc.following_error_limit),
            init_transactions: Some(lc.init.transactions),
            jitter_tolerance_us: Some(lc.init.jitter_tolerance.as_micros()),
            verify_factor: Some(lc.init.verify_factor),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopsSection {
    pub default: LoopSection,
    pub adapted: LoopSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub tau_s: f64,
    pub max_velocity_mm_s: f64,
    pub max_acceleration_mm_s2: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = AxisParams::<f64>::default();
        PlantSection {
            tau_s: p.tau,
            max_velocity_mm_s: p.max_velocity,
            max_acceleration_mm_s2: p.max_acceleration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub distance_mm: f64,
    pub velocity_mm_s: f64,
    pub acceleration_mm_s2: f64,
    pub dwell_s: f64,
    /// CSV with `time_ms,setpoint_mm`; replaces the trapezoid when set.
    /// Relative paths are resolved against the config file's directory.
    pub table: Option<PathBuf>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = Trapezoid::<f64>::default();
        TrajectorySection {
            distance_mm: t.distance,
            velocity_mm_s: t.velocity,
            acceleration_mm_s2: t.acceleration,
            dwell_s: t.dwell,
            table: None,
        }
    }
}

/// The URLLC ring. Node ids are plain integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingSection {
    pub nodes: Vec<u32>,
    pub slot_us: u64,
    pub tx_us: u64,
    pub queue_depth: usize,
    pub loss_rate: f64,
}

impl Default for RingSection {
    fn default() -> Self {
        let c = Topology::default().urllc;
        RingSection {
            nodes: c.nodes.iter().map(|n| n.0).collect(),
            slot_us: c.slot_time.as_micros(),
            tx_us: c.tx_time.as_micros(),
            queue_depth: c.queue_depth,
            loss_rate: c.loss_rate,
        }
    }
}

fn ring_config(id: RingId, nodes: &[u32], slot_us: u64, tx_us: u64, queue_depth: usize, loss_rate: f64) -> RingConfig {
    let mut c = RingConfig::new(
        id,
        nodes.iter().copied().map(NodeId).collect(),
        SimTime::from_micros(slot_us),
        SimTime::from_micros(tx_us),
    );
    c.queue_depth = queue_depth;
    c.loss_rate = loss_rate;
    c
}

/// The sensor ring plus the overlay link its master forwards to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRingSection {
    pub enabled: bool,
    pub nodes: Vec<u32>,
    pub slot_us: u64,
    pub tx_us: u64,
    pub queue_depth: usize,
    pub loss_rate: f64,
    pub period_ms: u64,
    pub overlay_latency_ms: f64,
    pub overlay_jitter_ms: f64,
}

impl Default for SensorRingSection {
    fn default() -> Self {
        let s = Topology::default().sensors.expect("default topology has a sensor ring");
        SensorRingSection {
            enabled: true,
            nodes: s.ring.nodes.iter().map(|n| n.0).collect(),
            slot_us: s.ring.slot_time.as_micros(),
            tx_us: s.ring.tx_time.as_micros(),
            queue_depth: s.ring.queue_depth,
            loss_rate: s.ring.loss_rate,
            period_ms: s.period.as_micros() / 1000,
            overlay_latency_ms: s.overlay.mean_delay.as_millis_f64(),
            overlay_jitter_ms: s.overlay.jitter.as_millis_f64(),
        }
    }
}

/// `urllc.nodes` lists the CNC first and the FPGA second; the sensor ring
/// must start with the CNC, which bridges it to the overlay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingsSection {
    pub urllc: RingSection,
    pub sensor: SensorRingSection,
}

impl RingsSection {
    pub fn topology(&self) -> Result<Topology, HarnessError> {
        if self.urllc.nodes.len() != 2 {
            return Err(HarnessError::Config("the URLLC ring holds exactly the CNC and the FPGA".into()));
        }
        let (u, s) = (&self.urllc, &self.sensor);
        let topology = Topology {
            cnc: NodeId(u.nodes[0]),
            fpga: NodeId(u.nodes[1]),
            urllc: ring_config(RingId(1), &u.nodes, u.slot_us, u.tx_us, u.queue_depth, u.loss_rate),
            sensors: s.enabled.then(|| SensorSetup {
                ring: ring_config(RingId(2), &s.nodes, s.slot_us, s.tx_us, s.queue_depth, s.loss_rate),
                period: SimTime::from_millis(s.period_ms),
                overlay: ChannelProfile::from_millis(s.overlay_latency_ms, s.overlay_jitter_ms),
            }),
        };
        topology.validate()?;
        Ok(topology)
    }
}

/// Link impairment. The sweep overrides `mean_delay_ms` and `jitter_ms`
/// with its axis values; `trial` uses them when no values are given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub distribution: JitterDistribution,
    pub loss_rate: f64,
    pub reorder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedRequest {
    pub time_ms: f64,
    pub requester: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub bandwidth_mhz: f64,
    pub lease_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub band_low_mhz: f64,
    pub band_high_mhz: f64,
    /// Issue the three-block static plan at the default site before any request.
    pub static_plan: bool,
    pub requests: Vec<ScriptedRequest>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        let b = Band::<f64>::local_default();
        SpectrumSection {
            band_low_mhz: b.low,
            band_high_mhz: b.high,
            static_plan: false,
            requests: Vec::new(),
        }
    }
}

impl SpectrumSection {
    /// The section as a script; line numbers count requests from 1, with
    /// the static plan as line 0.
    pub fn script(&self) -> Result<SpectrumScript, HarnessError> {
        let band = Band::new(self.band_low_mhz, self.band_high_mhz)?;
        let mut steps = Vec::new();
        if self.static_plan {
            steps.push(ScriptStep {
                line: 0,
                time: SimTime::ZERO,
                action: ScriptAction::StaticPlan(None),
            });
        }
        let mut last = SimTime::ZERO;
        for (i, r) in self.requests.iter().enumerate() {
            let line = i + 1;
            let bad = |m: String| HarnessError::Parse { line, message: m };
            if !(r.time_ms >= 0.0) || !(r.bandwidth_mhz > 0.0) {
                return Err(bad("request time must be non-negative and bandwidth positive".into()));
            }
            let time = SimTime::from_millis_f64(r.time_ms);
            if time < last {
                return Err(bad("request times must not decrease".into()));
            }
            last = time;
            let area = CoverageArea::new(r.x, r.y, r.radius).map_err(|e| bad(e.to_string()))?;
            let mut req = SpectrumRequest::new(r.requester.clone(), area, r.bandwidth_mhz);
            if let Some(l) = r.lease_ms {
                req = req.with_lease(SimTime::from_millis_f64(l));
            }
            steps.push(ScriptStep {
                line,
                time,
                action: ScriptAction::Request(req),
            });
        }
        Ok(SpectrumScript { band, steps })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep: SweepSpec,
    pub loops: LoopsSection,
    pub plant: PlantSection,
    pub trajectory: TrajectorySection,
    pub rings: RingsSection,
    pub channel: ChannelSection,
    pub spectrum: SpectrumSection,
    pub calibration: CalibrationSpace,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            HarnessError::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    /// Reads a config file, resolving a relative trajectory table path.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(table) = &cfg.trajectory.table {
            if table.is_relative() {
                let dir = path.parent().unwrap_or(Path::new("."));
                cfg.trajectory.table = Some(dir.join(table));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn loop_pair(&self) -> LoopPair<f64> {
        LoopPair {
            default: self.loops.default.apply(LoopConfig::default_profile()),
            adapted: self.loops.adapted.apply(LoopConfig::adapted()),
        }
    }

    pub fn trajectory(&self) -> Result<Trajectory<f64>, HarnessError> {
        let t = &self.trajectory;
        match &t.table {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|e| {
                    HarnessError::Config(format!("trajectory table {}: {e}", path.display()))
                })?;
                Ok(Trajectory::from_csv(file)?)
            }
            None => Ok(Trajectory::Trapezoid(Trapezoid {
                distance: t.distance_mm,
                velocity: t.velocity_mm_s,
                acceleration: t.acceleration_mm_s2,
                dwell: t.dwell_s,
            })),
        }
    }

    pub fn scenario(&self) -> Result<Scenario<f64>, HarnessError> {
        Ok(Scenario {
            axis: AxisParams {
                tau: self.plant.tau_s,
                max_velocity: self.plant.max_velocity_mm_s,
                max_acceleration: self.plant.max_acceleration_mm_s2,
            },
            trajectory: self.trajectory()?,
            topology: self.rings.topology()?,
            distribution: self.channel.distribution,
            loss_rate: self.channel.loss_rate,
            reorder_allowed: self.channel.reorder,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.sweep.validate()?;
        self.loop_pair().validate()?;
        let sc = self.scenario()?;
        sc.axis.validate()?;
        sc.trajectory.validate()?;
        sc.topology.validate()?;
        if !(self.channel.mean_delay_ms >= 0.0 && self.channel.jitter_ms >= 0.0) {
            return Err(HarnessError::Config("channel delay and jitter must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.channel.loss_rate) {
            return Err(HarnessError::Config(format!(
                "channel loss rate {} is outside [0, 1]",
                self.channel.loss_rate
            )));
        }
        self.spectrum.script()?;
        self.calibration.validate()?;
        Ok(())
    }

    /// Copy with both loop profiles written out in full.
    pub fn pinned(&self) -> Self {
        let pair = self.loop_pair();
        ExperimentConfig {
            loops: LoopsSection {
                default: LoopSection::pinned(&pair.default),
                adapted: LoopSection::pinned(&pair.adapted),
            },
            ..self.clone()
        }
    }

    pub fn with_loop_pair(&self, pair: &LoopPair<f64>) -> Self {
        ExperimentConfig {
            loops: LoopsSection {
                default: LoopSection::pinned(&pair.default),
                adapted: LoopSection::pinned(&pair.adapted),
            },
            ..self.clone()
        }
    }
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: &ExperimentConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            config: config.pinned(),
            seeds: config.sweep.seeds(),
            outputs: Vec::new(),
            started_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_clock_s: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let m = Self::from_json(&std::fs::read_to_string(path)?)?;
        m.config.validate()?;
        Ok(m)
    }
}
