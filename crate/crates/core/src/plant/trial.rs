//! One closed-loop machining trial: CNC and FPGA exchange frames over the
//! URLLC ring and a pair of impaired channels while the sensor ring feeds
//! the overlay through the shared master node.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel::{Channel, ChannelProfile, DeliveryRecord};
use crate::ring::{
    Bridge, Enqueued, Frame, FrameClass, MasterNode, NodeId, Ring, RingConfig, RingId, RingStats,
    Service, Transmission,
};
use crate::scalar::Scalar;
use crate::sim::{streams, Flow, Model, RngStream, Scheduler, SimTime, TraceLog};

use super::axis::{step_axis, AxisModel, AxisParams};
use super::pid::{Controller, PidGains};
use super::trajectory::Trajectory;
use super::PlantError;

const COMMAND_BYTES: u16 = 96;
const INIT_BYTES: u16 = 112;
const STATUS_BYTES: u16 = 128;
const SENSOR_BYTES: u16 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationProfile {
    Default,
    Adapted,
}

/// Driver start-up handshake: register writes sent stop-and-wait, each
/// acknowledged in the FPGA's cyclic status frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub transactions: u32,
    /// A status frame arriving more than one servo period plus this
    /// tolerance after its predecessor switches the driver to verified
    /// writes for the rest of the start-up.
    pub jitter_tolerance: SimTime,
    /// Exchanges per write once verification is on.
    pub verify_factor: u32,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            transactions: 200,
            jitter_tolerance: SimTime::from_micros(310),
            verify_factor: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig<T> {
    pub profile: AdaptationProfile,
    pub servo_period: SimTime,
    pub watchdog_timeout: SimTime,
    pub init_grace: SimTime,
    /// mm
    pub following_error_limit: T,
    pub gains: PidGains<T>,
    pub init: InitConfig,
}

impl<T: Scalar> LoopConfig<T> {
    /// Stock driver and watchdog settings.
    pub fn default_profile() -> Self {
        LoopConfig {
            profile: AdaptationProfile::Default,
            servo_period: SimTime::from_micros(1000),
            watchdog_timeout: SimTime::from_micros(1500),
            init_grace: SimTime::from_millis(1500),
            following_error_limit: T::of(0.1),
            gains: PidGains::default(),
            init: InitConfig::default(),
        }
    }

    /// Driver start-up window and watchdog widened for slow links.
    pub fn adapted() -> Self {
        LoopConfig {
            profile: AdaptationProfile::Adapted,
            watchdog_timeout: SimTime::from_micros(1550),
            init_grace: SimTime::from_secs(5),
            ..Self::default_profile()
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if self.servo_period == SimTime::ZERO {
            return Err(PlantError::Config("servo period must be positive".into()));
        }
        if self.watchdog_timeout == SimTime::ZERO {
            return Err(PlantError::Config("watchdog timeout must be positive".into()));
        }
        if !(self.following_error_limit > T::zero()) {
            return Err(PlantError::Config("following-error limit must be positive".into()));
        }
        if self.init.transactions == 0 || self.init.verify_factor == 0 {
            return Err(PlantError::Config("init needs at least one transaction and exchange".into()));
        }
        let g = &self.gains;
        if ![g.kp, g.ki, g.kd, g.integral_clamp].iter().all(|v| v.is_finite() && *v >= T::zero()) {
            return Err(PlantError::Config("gains must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// The two profiles a sweep cell is judged with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopPair<T> {
    pub default: LoopConfig<T>,
    pub adapted: LoopConfig<T>,
}

impl<T: Scalar> Default for LoopPair<T> {
    fn default() -> Self {
        LoopPair {
            default: LoopConfig::default_profile(),
            adapted: LoopConfig::adapted(),
        }
    }
}

impl<T: Scalar> LoopPair<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        self.default.validate()?;
        self.adapted.validate()?;
        if self.adapted.init_grace < self.default.init_grace
            || self.adapted.watchdog_timeout < self.default.watchdog_timeout
        {
            return Err(PlantError::Config(
                "adapted profile must not shorten the init grace or watchdog timeout".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSetup {
    /// Ring whose first node is the master shared with the URLLC ring.
    pub ring: RingConfig,
    /// Emission period of every sensor.
    pub period: SimTime,
    pub overlay: ChannelProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub cnc: NodeId,
    pub fpga: NodeId,
    pub urllc: RingConfig,
    pub sensors: Option<SensorSetup>,
}

impl Default for Topology {
    /// CNC and FPGA on a two-node ring whose rotation equals the 1 ms servo
    /// period; seven sensors plus the CNC as master on the second ring.
    fn default() -> Self {
        let cnc = NodeId(0);
        let fpga = NodeId(1);
        let mut urllc = RingConfig::urllc(RingId(1), cnc, fpga);
        urllc.slot_time = SimTime::from_micros(500);
        urllc.tx_time = SimTime::from_micros(250);
        let mut nodes = vec![cnc];
        nodes.extend((10..17).map(NodeId));
        Topology {
            cnc,
            fpga,
            urllc,
            sensors: Some(SensorSetup {
                ring: RingConfig::sensor(RingId(2), nodes),
                period: SimTime::from_millis(10),
                overlay: ChannelProfile::overlay_default(),
            }),
        }
    }
}

impl Topology {
    pub fn without_sensors(mut self) -> Self {
        self.sensors = None;
        self
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.urllc.validate()?;
        if self.cnc == self.fpga || !self.urllc.contains(self.cnc) || !self.urllc.contains(self.fpga) {
            return Err(PlantError::Config("CNC and FPGA must be distinct members of the URLLC ring".into()));
        }
        if let Some(s) = &self.sensors {
            s.ring.validate()?;
            s.overlay.validate()?;
            if s.period == SimTime::ZERO {
                return Err(PlantError::Config("sensor period must be positive".into()));
            }
            if s.ring.nodes.first() != Some(&self.cnc) {
                return Err(PlantError::Config("the sensor ring must start at the master (CNC) node".into()));
            }
            if s.ring.id == self.urllc.id {
                return Err(PlantError::Config("rings need distinct ids".into()));
            }
        }
        Ok(())
    }
}

/// Impairment on each direction of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPair {
    pub command: ChannelProfile,
    pub feedback: ChannelProfile,
}

impl ChannelPair {
    pub fn symmetric(profile: ChannelProfile) -> Self {
        ChannelPair {
            command: profile,
            feedback: profile,
        }
    }

    pub fn ideal() -> Self {
        Self::symmetric(ChannelProfile::ideal())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup<T> {
    pub loop_config: LoopConfig<T>,
    pub axis: AxisParams<T>,
    pub trajectory: Trajectory<T>,
    pub topology: Topology,
    pub channels: ChannelPair,
    pub trial_length: SimTime,
    pub seed: u64,
    /// Status frames reaching the CNC at or after this time are discarded.
    pub sever_feedback_at: Option<SimTime>,
    pub record_samples: bool,
    pub record_events: bool,
}

impl<T: Scalar> TrialSetup<T> {
    pub fn new(loop_config: LoopConfig<T>, channels: ChannelPair) -> Self {
        TrialSetup {
            loop_config,
            axis: AxisParams::default(),
            trajectory: Trajectory::default(),
            topology: Topology::default(),
            channels,
            trial_length: SimTime::from_secs(60),
            seed: 1,
            sever_feedback_at: None,
            record_samples: false,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailCause {
    FollowingError,
    Watchdog,
    InitFailure,
    None,
}

impl FailCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FailCause::FollowingError => "following-error",
            FailCause::Watchdog => "watchdog",
            FailCause::InitFailure => "init-failure",
            FailCause::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FailCause::FollowingError,
            FailCause::Watchdog,
            FailCause::InitFailure,
            FailCause::None,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialVerdict<T> {
    pub outcome: Outcome,
    pub cause: FailCause,
    /// mm
    pub max_following_error: T,
    pub duration_survived: SimTime,
}

impl<T: Scalar> TrialVerdict<T> {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    pub fn to_f64(&self) -> TrialVerdict<f64> {
        TrialVerdict {
            outcome: self.outcome,
            cause: self.cause,
            max_following_error: self.max_following_error.to_f64_lossy(),
            duration_survived: self.duration_survived,
        }
    }
}

/// One servo tick for plotting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample<T> {
    pub time: SimTime,
    pub setpoint: T,
    pub feedback: T,
    pub command: T,
    pub following_error: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport<T> {
    pub verdict: TrialVerdict<T>,
    pub init_completed_at: Option<SimTime>,
    pub motion_started_at: Option<SimTime>,
    pub verified_init: bool,
    pub events_processed: u64,
    pub commands_sent: u64,
    pub status_received: u64,
    pub status_discarded: u64,
    pub urllc: RingStats,
    pub sensor: Option<RingStats>,
    pub overlay_delivered: u64,
    pub samples: Vec<TraceSample<T>>,
    /// Per-frame channel records, CNC to FPGA and back; filled with `samples`.
    #[serde(skip)]
    pub command_deliveries: Vec<DeliveryRecord>,
    #[serde(skip)]
    pub feedback_deliveries: Vec<DeliveryRecord>,
    #[serde(skip)]
    pub events: TraceLog,
}

#[derive(Serialize)]
struct SampleRow {
    time_us: u64,
    setpoint_mm: f64,
    feedback_mm: f64,
    command_mm_s: f64,
    following_error_mm: f64,
}

/// CSV columns: `time_us,setpoint_mm,feedback_mm,command_mm_s,following_error_mm`.
pub fn write_trial_csv<T: Scalar, W: Write>(samples: &[TraceSample<T>], out: W) -> Result<(), PlantError> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(SampleRow {
            time_us: s.time.as_micros(),
            setpoint_mm: s.setpoint.to_f64_lossy(),
            feedback_mm: s.feedback.to_f64_lossy(),
            command_mm_s: s.command.to_f64_lossy(),
            following_error_mm: s.following_error.to_f64_lossy(),
        })
        .map_err(|e| PlantError::Export(e.to_string()))?;
    }
    w.flush().map_err(|e| PlantError::Export(e.to_string()))
}

#[derive(Debug, Clone)]
enum Msg<T> {
    Command { seq: u64, velocity: T },
    Init { exchange: u64 },
    Status { seq: u64, position: T, ack: Option<u64> },
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Net {
    Urllc,
    Sensor,
}

#[derive(Debug)]
enum Ev<T> {
    Start,
    CncTick,
    FpgaStatus,
    SensorEmit(NodeId),
    RingService(Net, NodeId),
    RingDone(Net, Transmission<Msg<T>>),
    AtFpga(Msg<T>),
    AtCnc(Msg<T>),
    Overlay,
    Watchdog,
    InitDeadline,
}

#[derive(Debug, Default)]
struct InitState {
    left: u64,
    outstanding: Option<u64>,
    next_exchange: u64,
    verified: bool,
    done_at: Option<SimTime>,
}

struct LoopModel<'a, T: Scalar> {
    setup: &'a TrialSetup<T>,
    period: SimTime,
    urllc: Ring<Msg<T>>,
    sensor: Option<(Ring<Msg<T>>, MasterNode)>,
    command_ch: Channel,
    feedback_ch: Channel,

    axis: AxisModel<T>,
    axis_time: SimTime,
    drive: T,
    applied_seq: Option<u64>,
    acked: Option<u64>,
    status_seq: u64,

    controller: Controller<T>,
    feedback: Option<(u64, T)>,
    last_status: Option<SimTime>,
    watchdog_deadline: SimTime,
    watchdog_armed: bool,
    init: InitState,
    motion_start: Option<SimTime>,
    command_seq: u64,
    next_frame: u64,
    max_fe: T,
    failure: Option<(FailCause, SimTime)>,

    commands_sent: u64,
    status_received: u64,
    status_discarded: u64,
    overlay_delivered: u64,
    samples: Vec<TraceSample<T>>,
    deliveries: [Vec<DeliveryRecord>; 2],
    log: TraceLog,
}

impl<'a, T: Scalar> LoopModel<'a, T> {
    fn new(setup: &'a TrialSetup<T>) -> Result<Self, PlantError> {
        let seed = setup.seed;
        let topo = &setup.topology;
        let urllc = Ring::new(topo.urllc.clone(), RngStream::new(seed, streams::URLLC_RING_LOSS))?;
        let sensor = match &topo.sensors {
            Some(s) => {
                let ring = Ring::new(s.ring.clone(), RngStream::new(seed, streams::SENSOR_RING_LOSS))?;
                let overlay = Channel::new(
                    s.overlay,
                    RngStream::new(seed, streams::OVERLAY_JITTER),
                    RngStream::new(seed, streams::OVERLAY_LOSS),
                )?;
                let master = MasterNode::new(topo.cnc, &topo.urllc, &s.ring, overlay)?;
                Some((ring, master))
            }
            None => None,
        };
        let command_ch = Channel::new(
            setup.channels.command,
            RngStream::new(seed, streams::COMMAND_JITTER),
            RngStream::new(seed, streams::COMMAND_LOSS),
        )?;
        let feedback_ch = Channel::new(
            setup.channels.feedback,
            RngStream::new(seed, streams::FEEDBACK_JITTER),
            RngStream::new(seed, streams::FEEDBACK_LOSS),
        )?;
        let lc = &setup.loop_config;
        Ok(LoopModel {
            setup,
            period: lc.servo_period,
            urllc,
            sensor,
            command_ch,
            feedback_ch,
            axis: AxisModel::at_rest(setup.axis),
            axis_time: SimTime::ZERO,
            drive: T::zero(),
            applied_seq: None,
            acked: None,
            status_seq: 0,
            controller: Controller::new(lc.gains),
            feedback: None,
            last_status: None,
            watchdog_deadline: SimTime::ZERO,
            watchdog_armed: false,
            init: InitState {
                left: u64::from(lc.init.transactions),
                ..InitState::default()
            },
            motion_start: None,
            command_seq: 0,
            next_frame: 0,
            max_fe: T::zero(),
            failure: None,
            commands_sent: 0,
            status_received: 0,
            status_discarded: 0,
            overlay_delivered: 0,
            samples: Vec::new(),
            deliveries: [Vec::new(), Vec::new()],
            log: if setup.record_events {
                TraceLog::enabled()
            } else {
                TraceLog::disabled()
            },
        })
    }

    fn frame_id(&mut self) -> u64 {
        self.next_frame += 1;
        self.next_frame
    }

    fn advance_axis(&mut self, now: SimTime) {
        if now > self.axis_time {
            self.axis = step_axis(&self.axis, self.drive, now - self.axis_time);
            self.axis_time = now;
        }
    }

    fn fail(&mut self, cause: FailCause, now: SimTime) -> Flow {
        self.failure = Some((cause, now));
        let max_fe = self.max_fe.to_f64_lossy();
        self.log.record(now, "verdict", "fail", || {
            json!({ "cause": cause.as_str(), "max_following_error_mm": max_fe })
        });
        Flow::Halt
    }

    fn dispatch(&mut self, net: Net, node: NodeId, service: Service<Msg<T>>, sched: &mut Scheduler<Ev<T>>) {
        for tx in service.transmissions {
            let at = tx.done;
            sched.schedule(at, Ev::RingDone(net, tx)).expect("airtime ends after it starts");
        }
        if let Some(at) = service.next_service {
            sched
                .schedule(at, Ev::RingService(net, node))
                .expect("next token hold is not in the past");
        }
    }

    fn handle_enqueue(&mut self, net: Net, node: NodeId, result: Enqueued<Msg<T>>, sched: &mut Scheduler<Ev<T>>) {
        match result {
            Enqueued::Sent(service) => self.dispatch(net, node, service, sched),
            Enqueued::Queued {
                service_at: Some(at),
                ..
            } => {
                sched
                    .schedule(at, Ev::RingService(net, node))
                    .expect("next token hold is not in the past");
            }
            Enqueued::Queued { .. } | Enqueued::Dropped => {}
        }
    }

    fn send_control(&mut self, from_cnc: bool, size: u16, msg: Msg<T>, now: SimTime, sched: &mut Scheduler<Ev<T>>) {
        let topo = &self.setup.topology;
        let (src, dst) = if from_cnc {
            (topo.cnc, topo.fpga)
        } else {
            (topo.fpga, topo.cnc)
        };
        let id = self.frame_id();
        let frame = Frame::control(id, src, dst, size, msg).expect("built-in frame sizes are in range");
        let result = self.urllc.enqueue(src, frame, now).expect("loop endpoints are ring members");
        self.handle_enqueue(Net::Urllc, src, result, sched);
    }

    fn send_init(&mut self, now: SimTime, sched: &mut Scheduler<Ev<T>>) {
        let exchange = self.init.next_exchange;
        self.init.next_exchange += 1;
        self.init.outstanding = Some(exchange);
        self.send_control(true, INIT_BYTES, Msg::Init { exchange }, now, sched);
    }

    fn on_status(&mut self, now: SimTime, seq: u64, position: T, ack: Option<u64>, sched: &mut Scheduler<Ev<T>>) {
        if self.setup.sever_feedback_at.is_some_and(|t| now >= t) {
            self.status_discarded += 1;
            return;
        }
        self.status_received += 1;
        if self.feedback.is_none_or(|(s, _)| seq > s) {
            self.feedback = Some((seq, position));
        }
        self.watchdog_deadline = now + self.setup.loop_config.watchdog_timeout;
        if !self.watchdog_armed {
            self.watchdog_armed = true;
            sched
                .schedule(self.watchdog_deadline, Ev::Watchdog)
                .expect("deadline lies ahead");
        }
        if self.init.done_at.is_none() {
            self.advance_init(now, ack, sched);
        }
        self.last_status = Some(now);
    }

    fn advance_init(&mut self, now: SimTime, ack: Option<u64>, sched: &mut Scheduler<Ev<T>>) {
        let cfg = self.setup.loop_config.init;
        if let Some(last) = self.last_status {
            if !self.init.verified && now - last > self.period + cfg.jitter_tolerance {
                self.init.verified = true;
                self.init.left *= u64::from(cfg.verify_factor);
                let gap = (now - last).as_micros();
                self.log.record(now, "driver", "verify", || json!({ "gap_us": gap }));
            }
        }
        if ack.is_none() || ack != self.init.outstanding {
            return;
        }
        self.init.outstanding = None;
        self.init.left -= 1;
        if self.init.left > 0 {
            self.send_init(now, sched);
            return;
        }
        self.init.done_at = Some(now);
        let p = self.period.as_micros();
        let start = SimTime::from_micros(now.as_micros().div_ceil(p) * p);
        self.motion_start = Some(start);
        let verified = self.init.verified;
        self.log.record(now, "driver", "ready", || json!({ "verified": verified }));
        sched.schedule(start, Ev::CncTick).expect("motion starts now or later");
    }

    fn on_tick(&mut self, now: SimTime, sched: &mut Scheduler<Ev<T>>) -> Flow {
        let start = self.motion_start.expect("ticks run only after init");
        let setpoint = self.setup.trajectory.setpoint(now - start);
        let feedback = self.feedback.map_or(T::zero(), |(_, p)| p);
        let fe = setpoint - feedback;
        if fe.abs() > self.max_fe {
            self.max_fe = fe.abs();
        }
        if fe.abs() > self.setup.loop_config.following_error_limit {
            return self.fail(FailCause::FollowingError, now);
        }
        let velocity = self.controller.tick(setpoint, feedback, self.period);
        if self.setup.record_samples {
            self.samples.push(TraceSample {
                time: now,
                setpoint,
                feedback,
                command: velocity,
                following_error: fe,
            });
        }
        self.command_seq += 1;
        self.commands_sent += 1;
        let seq = self.command_seq;
        self.send_control(true, COMMAND_BYTES, Msg::Command { seq, velocity }, now, sched);
        sched.schedule_in(self.period, Ev::CncTick);
        Flow::Continue
    }

    fn on_ring_done(&mut self, net: Net, tx: Transmission<Msg<T>>, now: SimTime, sched: &mut Scheduler<Ev<T>>) {
        match net {
            Net::Urllc => {
                let Some(frame) = self.urllc.complete(tx) else { return };
                let to_fpga = frame.destination == self.setup.topology.fpga;
                let ch = if to_fpga {
                    &mut self.command_ch
                } else {
                    &mut self.feedback_ch
                };
                let rec = ch.transmit(frame.id, now);
                if self.setup.record_samples {
                    self.deliveries[usize::from(!to_fpga)].push(rec);
                }
                if let Some(at) = rec.delivered {
                    let ev = if to_fpga {
                        Ev::AtFpga(frame.payload)
                    } else {
                        Ev::AtCnc(frame.payload)
                    };
                    sched.schedule(at, ev).expect("channel delay is non-negative");
                }
            }
            Net::Sensor => {
                let Some((ring, master)) = self.sensor.as_mut() else { return };
                let Some(frame) = ring.complete(tx) else { return };
                if frame.class == FrameClass::Urllc {
                    return;
                }
                if let Bridge::Forwarded(rec) = master.bridge_frame(&frame, now) {
                    if let Some(at) = rec.delivered {
                        sched.schedule(at, Ev::Overlay).expect("overlay delay is non-negative");
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Model for LoopModel<'_, T> {
    type Event = Ev<T>;

    fn handle(&mut self, now: SimTime, event: Ev<T>, sched: &mut Scheduler<Ev<T>>) -> Flow {
        match event {
            Ev::Start => {
                let fpga_idx = self.urllc.config().position(self.setup.topology.fpga).unwrap_or(1) as u64;
                let phase = (self.urllc.config().slot_time.as_micros() * fpga_idx) % self.period.as_micros();
                sched.schedule_in(SimTime::from_micros(phase), Ev::FpgaStatus);
                sched.schedule_in(self.setup.loop_config.init_grace, Ev::InitDeadline);
                if let Some(s) = &self.setup.topology.sensors {
                    let members = &s.ring.nodes[1..];
                    let spread = s.period.as_micros() / members.len().max(1) as u64;
                    for (i, node) in members.iter().enumerate() {
                        sched.schedule_in(SimTime::from_micros(spread * i as u64), Ev::SensorEmit(*node));
                    }
                }
                self.send_init(now, sched);
            }
            Ev::CncTick => return self.on_tick(now, sched),
            Ev::FpgaStatus => {
                self.advance_axis(now);
                self.status_seq += 1;
                let msg = Msg::Status {
                    seq: self.status_seq,
                    position: self.axis.position,
                    ack: self.acked,
                };
                self.send_control(false, STATUS_BYTES, msg, now, sched);
                sched.schedule_in(self.period, Ev::FpgaStatus);
            }
            Ev::SensorEmit(node) => {
                let id = self.frame_id();
                let master = self.setup.topology.cnc;
                let period = self.setup.topology.sensors.as_ref().map(|s| s.period);
                if let Some((ring, _)) = self.sensor.as_mut() {
                    let frame = Frame::new(id, node, master, SENSOR_BYTES, FrameClass::Sensor, Msg::Sample);
                    let result = ring.enqueue(node, frame, now).expect("sensor is a ring member");
                    self.handle_enqueue(Net::Sensor, node, result, sched);
                }
                if let Some(p) = period {
                    sched.schedule_in(p, Ev::SensorEmit(node));
                }
            }
            Ev::RingService(net, node) => {
                let service = match net {
                    Net::Urllc => self.urllc.service(node, now),
                    Net::Sensor => match self.sensor.as_mut() {
                        Some((ring, _)) => ring.service(node, now),
                        None => return Flow::Continue,
                    },
                }
                .expect("serviced nodes are ring members");
                self.dispatch(net, node, service, sched);
            }
            Ev::RingDone(net, tx) => self.on_ring_done(net, tx, now, sched),
            Ev::AtFpga(Msg::Command { seq, velocity }) => {
                if self.applied_seq.is_none_or(|s| seq > s) {
                    self.advance_axis(now);
                    self.drive = velocity;
                    self.applied_seq = Some(seq);
                }
            }
            Ev::AtFpga(Msg::Init { exchange }) => {
                self.acked = Some(self.acked.map_or(exchange, |a| a.max(exchange)));
            }
            Ev::AtCnc(Msg::Status { seq, position, ack }) => self.on_status(now, seq, position, ack, sched),
            Ev::AtFpga(_) | Ev::AtCnc(_) => {}
            Ev::Overlay => self.overlay_delivered += 1,
            Ev::Watchdog => {
                if now >= self.watchdog_deadline {
                    return self.fail(FailCause::Watchdog, now);
                }
                sched
                    .schedule(self.watchdog_deadline, Ev::Watchdog)
                    .expect("deadline lies ahead");
            }
            Ev::InitDeadline => {
                if self.init.done_at.is_none() {
                    return self.fail(FailCause::InitFailure, now);
                }
            }
        }
        Flow::Continue
    }
}

/// Runs one trial to completion or to the first failure.
pub fn run_trial<T: Scalar>(setup: &TrialSetup<T>) -> Result<TrialReport<T>, PlantError> {
    setup.loop_config.validate()?;
    setup.axis.validate()?;
    setup.trajectory.validate()?;
    setup.topology.validate()?;
    setup.channels.command.validate()?;
    setup.channels.feedback.validate()?;
    if setup.trial_length == SimTime::ZERO {
        return Err(PlantError::Config("trial length must be positive".into()));
    }

    let mut model = LoopModel::new(setup)?;
    let mut sched = Scheduler::new();
    sched.schedule(SimTime::ZERO, Ev::Start).expect("fresh scheduler");
    let summary = sched.run_until(&mut model, setup.trial_length);

    let (outcome, cause, survived) = match model.failure {
        Some((cause, at)) => (Outcome::Fail, cause, at),
        None if model.init.done_at.is_none() => (Outcome::Fail, FailCause::InitFailure, setup.trial_length),
        None => (Outcome::Pass, FailCause::None, setup.trial_length),
    };
    Ok(TrialReport {
        verdict: TrialVerdict {
            outcome,
            cause,
            max_following_error: model.max_fe,
            duration_survived: survived,
        },
        init_completed_at: model.init.done_at,
        motion_started_at: model.motion_start,
        verified_init: model.init.verified,
        events_processed: summary.events_processed,
        commands_sent: model.commands_sent,
        status_received: model.status_received,
        status_discarded: model.status_discarded,
        urllc: model.urllc.stats().clone(),
        sensor: model.sensor.as_ref().map(|(r, _)| r.stats().clone()),
        overlay_delivered: model.overlay_delivered,
        samples: model.samples,
        command_deliveries: std::mem::take(&mut model.deliveries[0]),
        feedback_deliveries: std::mem::take(&mut model.deliveries[1]),
        events: model.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(latency_ms: f64, jitter_ms: f64, lc: LoopConfig<f64>) -> TrialSetup<f64> {
        let mut s = TrialSetup::new(lc, ChannelPair::symmetric(ChannelProfile::from_millis(latency_ms, jitter_ms)));
        s.trial_length = SimTime::from_secs(10);
        s
    }

    #[test]
    fn ideal_channels_pass() {
        let r = run_trial(&setup(0.0, 0.0, LoopConfig::default_profile())).unwrap();
        assert_eq!(r.verdict.outcome, Outcome::Pass);
        assert_eq!(r.verdict.cause, FailCause::None);
        assert!(r.verdict.max_following_error < 0.1);
        assert_eq!(r.verdict.duration_survived, SimTime::from_secs(10));
        assert!(!r.verified_init);
        assert!(r.overlay_delivered > 0);
    }

    #[test]
    fn five_ms_latency_fails() {
        for j in [0.05, 0.2] {
            let r = run_trial(&setup(5.0, j, LoopConfig::adapted())).unwrap();
            assert_eq!(r.verdict.outcome, Outcome::Fail, "jitter {j}");
        }
    }

    #[test]
    fn adaptation_rescues_three_ms_with_point_two_jitter() {
        let d = run_trial(&setup(3.0, 0.2, LoopConfig::default_profile())).unwrap();
        assert_eq!(d.verdict.cause, FailCause::InitFailure);
        let a = run_trial(&setup(3.0, 0.2, LoopConfig::adapted())).unwrap();
        assert_eq!(a.verdict.outcome, Outcome::Pass, "{:?}", a.verdict);
    }

    #[test]
    fn zero_servo_period_is_a_config_error() {
        let mut lc = LoopConfig::default_profile();
        lc.servo_period = SimTime::ZERO;
        assert!(matches!(run_trial(&setup(1.0, 0.0, lc)), Err(PlantError::Config(_))));
    }

    #[test]
    fn adapted_profile_is_not_tighter() {
        assert!(LoopPair::<f64>::default().validate().is_ok());
        let mut bad = LoopPair::<f64>::default();
        bad.adapted.init_grace = SimTime::from_millis(10);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn verdicts_are_deterministic() {
        let s = setup(2.0, 0.15, LoopConfig::default_profile());
        let a = run_trial(&s).unwrap();
        let b = run_trial(&s).unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert_eq!(a.events_processed, b.events_processed);
    }

    #[test]
    fn event_log_is_reproducible() {
        let mut s = setup(1.0, 0.2, LoopConfig::adapted());
        s.record_events = true;
        let a = run_trial(&s).unwrap().events.to_ndjson();
        let b = run_trial(&s).unwrap().events.to_ndjson();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn severed_feedback_trips_the_watchdog() {
        let mut s = setup(1.0, 0.1, LoopConfig::default_profile());
        let cut = SimTime::from_millis(4321);
        s.sever_feedback_at = Some(cut);
        let r = run_trial(&s).unwrap();
        assert_eq!(r.verdict.cause, FailCause::Watchdog);
        let limit = cut + s.loop_config.watchdog_timeout + s.loop_config.servo_period;
        assert!(r.verdict.duration_survived <= limit);
    }

    #[test]
    fn trial_trace_export() {
        let mut s = setup(0.5, 0.05, LoopConfig::default_profile());
        s.trial_length = SimTime::from_secs(2);
        s.record_samples = true;
        let r = run_trial(&s).unwrap();
        let mut buf = Vec::new();
        write_trial_csv(&r.samples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_us,setpoint_mm,feedback_mm,command_mm_s,following_error_mm\n"));
        assert_eq!(text.lines().count(), r.samples.len() + 1);
    }

    #[test]
    fn runs_in_single_precision() {
        let mut s = TrialSetup::<f32>::new(
            LoopConfig::default_profile(),
            ChannelPair::symmetric(ChannelProfile::from_millis(1.0, 0.05)),
        );
        s.trial_length = SimTime::from_secs(5);
        assert_eq!(run_trial(&s).unwrap().verdict.outcome, Outcome::Pass);
    }
}
