//! Central spectrum management for a shared local band.
//!
//! Networks request a contiguous block at a coverage disc. A request is
//! granted when a block of the requested width is free of every active grant
//! whose disc intersects the requested one; otherwise it is rejected with the
//! bandwidth already occupied at that place. Block placement is delegated to
//! an [`AssignmentPolicy`], first-fit ascending by default.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::QosProfile;
use crate::scalar::Scalar;
use crate::sim::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("invalid band: low edge {low} must be below high edge {high}")]
    InvalidBand { low: f64, high: f64 },
    #[error("invalid coverage area: radius {radius} must be positive and finite")]
    InvalidArea { radius: f64 },
    #[error("invalid bandwidth {0}: must be positive and finite")]
    InvalidBandwidth(f64),
    #[error("unknown grant {0}")]
    UnknownGrant(GrantId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Point { x, y }
    }

    fn distance_squared(&self, other: &Point<T>) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// A closed disc in the planar site frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageArea<T> {
    pub center: Point<T>,
    pub radius: T,
}

impl<T: Scalar> CoverageArea<T> {
    pub fn new(x: T, y: T, radius: T) -> Result<Self, SpectrumError> {
        let area = CoverageArea {
            center: Point::new(x, y),
            radius,
        };
        area.validate()?;
        Ok(area)
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        let ok = self.radius.is_finite()
            && self.radius > T::zero()
            && self.center.x.is_finite()
            && self.center.y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SpectrumError::InvalidArea {
                radius: self.radius.to_f64_lossy(),
            })
        }
    }

    pub fn contains(&self, p: &Point<T>) -> bool {
        self.center.distance_squared(p) <= self.radius * self.radius
    }

    /// Closed discs: tangent discs share a point and therefore intersect.
    pub fn intersects(&self, other: &CoverageArea<T>) -> bool {
        let reach = self.radius + other.radius;
        self.center.distance_squared(&other.center) <= reach * reach
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band<T> {
    pub low: T,
    pub high: T,
}

impl<T: Scalar> Band<T> {
    pub fn new(low: T, high: T) -> Result<Self, SpectrumError> {
        if low.is_finite() && high.is_finite() && low < high {
            Ok(Band { low, high })
        } else {
            Err(SpectrumError::InvalidBand {
                low: low.to_f64_lossy(),
                high: high.to_f64_lossy(),
            })
        }
    }

    /// The 3700–3800 MHz local-licence band.
    pub fn local_default() -> Self {
        Band {
            low: T::of(3700.0),
            high: T::of(3800.0),
        }
    }

    pub fn width(&self) -> T {
        self.high - self.low
    }
}

/// A contiguous frequency block in MHz, half-open in the overlap sense:
/// blocks that only share an edge do not overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBlock<T> {
    pub low: T,
    pub high: T,
}

impl<T: Scalar> SpectrumBlock<T> {
    pub fn new(low: T, high: T) -> Self {
        SpectrumBlock { low, high }
    }

    pub fn width(&self) -> T {
        self.high - self.low
    }

    pub fn overlaps(&self, other: &SpectrumBlock<T>) -> bool {
        self.low < other.high && other.low < self.high
    }

    pub fn within(&self, band: &Band<T>) -> bool {
        self.low >= band.low && self.high <= band.high && self.low < self.high
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct GrantId(pub u64);

impl fmt::Display for GrantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// What a network uses its block for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkRole {
    /// Closed-loop controller traffic inside an underlayer ring.
    ControlUrllc,
    /// Sensor data in the second underlayer ring.
    SensorData,
    /// Overlay cell carrying non-mission-critical traffic.
    Overlay,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRequest<T> {
    pub requester: String,
    pub area: CoverageArea<T>,
    pub bandwidth: T,
    pub qos: QosProfile,
    #[serde(default)]
    pub role: NetworkRole,
    /// Lease duration; `None` holds the block until released.
    #[serde(default)]
    pub lease: Option<SimTime>,
}

impl<T: Scalar> SpectrumRequest<T> {
    pub fn new(requester: impl Into<String>, area: CoverageArea<T>, bandwidth: T) -> Self {
        SpectrumRequest {
            requester: requester.into(),
            area,
            bandwidth,
            qos: QosProfile::relaxed(),
            role: NetworkRole::Unspecified,
            lease: None,
        }
    }

    pub fn with_qos(mut self, qos: QosProfile) -> Self {
        self.qos = qos;
        self
    }

    pub fn with_role(mut self, role: NetworkRole) -> Self {
        self.role = role;
        self
    }

    pub fn with_lease(mut self, lease: SimTime) -> Self {
        self.lease = Some(lease);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGrant<T> {
    pub id: GrantId,
    pub requester: String,
    pub block: SpectrumBlock<T>,
    pub area: CoverageArea<T>,
    pub qos: QosProfile,
    pub role: NetworkRole,
    pub expires: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    OversizedRequest,
    NoContiguousBlock,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::OversizedRequest => "oversized request",
            RejectReason::NoContiguousBlock => "no contiguous free block",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection<T> {
    pub requester: String,
    pub reason: RejectReason,
    /// Union width of blocks held by grants intersecting the requested area.
    pub occupied: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision<T> {
    Granted(SpectrumGrant<T>),
    Rejected(Rejection<T>),
}

impl<T> Decision<T> {
    pub fn grant(&self) -> Option<&SpectrumGrant<T>> {
        match self {
            Decision::Granted(g) => Some(g),
            Decision::Rejected(_) => None,
        }
    }

    pub fn is_granted(&self) -> bool {
        matches!(self, Decision::Granted(_))
    }
}

/// Chooses a block of `bandwidth` inside `band` that overlaps none of
/// `occupied`. Must be deterministic in its inputs.
pub trait AssignmentPolicy<T> {
    fn assign(
        &self,
        band: &Band<T>,
        occupied: &[SpectrumBlock<T>],
        bandwidth: T,
    ) -> Option<SpectrumBlock<T>>;
}

/// Lowest feasible block. The lowest start is always the band edge or the
/// upper edge of some occupied block, so only those candidates are tried.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FirstFit;

impl<T: Scalar> AssignmentPolicy<T> for FirstFit {
    fn assign(
        &self,
        band: &Band<T>,
        occupied: &[SpectrumBlock<T>],
        bandwidth: T,
    ) -> Option<SpectrumBlock<T>> {
        let mut starts: Vec<T> = std::iter::once(band.low)
            .chain(occupied.iter().map(|b| b.high))
            .filter(|s| *s >= band.low)
            .collect();
        starts.sort_by(|a, b| a.partial_cmp(b).expect("finite block edges"));
        starts.dedup();
        starts.into_iter().find_map(|start| {
            let candidate = SpectrumBlock::new(start, start + bandwidth);
            let fits = candidate.high <= band.high
                && occupied.iter().all(|b| !b.overlaps(&candidate));
            fits.then_some(candidate)
        })
    }
}

/// Grants at one point and their summed width.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy<T> {
    pub entries: Vec<(GrantId, SpectrumBlock<T>)>,
    pub total: T,
}

/// One line of the decision audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub time_us: u64,
    pub action: String,
    pub requester: String,
    pub grant: Option<GrantId>,
    pub verdict: String,
    pub bandwidth_mhz: f64,
    pub block_mhz: Option<(f64, f64)>,
    pub occupied_mhz: f64,
    pub area: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SpectrumManager<T, P = FirstFit> {
    band: Band<T>,
    policy: P,
    grants: BTreeMap<GrantId, SpectrumGrant<T>>,
    next_id: u64,
    audit: Vec<AuditRecord>,
}

impl<T: Scalar> SpectrumManager<T, FirstFit> {
    pub fn new(band: Band<T>) -> Self {
        Self::with_policy(band, FirstFit)
    }
}

impl<T: Scalar> Default for SpectrumManager<T, FirstFit> {
    fn default() -> Self {
        Self::new(Band::local_default())
    }
}

/// Default site for the static plan: the shop-floor cell at the origin.
pub fn default_site<T: Scalar>() -> CoverageArea<T> {
    CoverageArea {
        center: Point::new(T::zero(), T::zero()),
        radius: T::of(50.0),
    }
}

impl<T: Scalar, P: AssignmentPolicy<T>> SpectrumManager<T, P> {
    pub fn with_policy(band: Band<T>, policy: P) -> Self {
        SpectrumManager {
            band,
            policy,
            grants: BTreeMap::new(),
            next_id: 1,
            audit: Vec::new(),
        }
    }

    pub fn band(&self) -> &Band<T> {
        &self.band
    }

    pub fn active_grants(&self) -> impl Iterator<Item = &SpectrumGrant<T>> {
        self.grants.values()
    }

    pub fn grant(&self, id: GrantId) -> Option<&SpectrumGrant<T>> {
        self.grants.get(&id)
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Two 20 MHz underlayer blocks (controllers, sensors) and the 60 MHz
    /// overlay block at the default site.
    pub fn configure_static_plan(&mut self) -> Result<Vec<SpectrumGrant<T>>, SpectrumError> {
        self.configure_static_plan_at(default_site())
    }

    pub fn configure_static_plan_at(
        &mut self,
        site: CoverageArea<T>,
    ) -> Result<Vec<SpectrumGrant<T>>, SpectrumError> {
        let plan = [
            ("underlay-urllc", 20.0, QosProfile::urllc(), NetworkRole::ControlUrllc),
            ("underlay-sensor", 20.0, QosProfile::sensor(), NetworkRole::SensorData),
            ("overlay", 60.0, QosProfile::relaxed(), NetworkRole::Overlay),
        ];
        let mut granted = Vec::with_capacity(plan.len());
        for (name, mhz, qos, role) in plan {
            let req = SpectrumRequest::new(name, site, T::of(mhz))
                .with_qos(qos)
                .with_role(role);
            if let Decision::Granted(g) = self.request_spectrum(&req, SimTime::ZERO)? {
                granted.push(g);
            }
        }
        Ok(granted)
    }

    /// Drops grants whose lease has run out by `now`.
    pub fn expire(&mut self, now: SimTime) {
        let expired: Vec<GrantId> = self
            .grants
            .values()
            .filter(|g| g.expires.is_some_and(|e| e <= now))
            .map(|g| g.id)
            .collect();
        for id in expired {
            if let Some(g) = self.grants.remove(&id) {
                self.audit.push(AuditRecord {
                    time_us: now.as_micros(),
                    action: "expire".into(),
                    requester: g.requester.clone(),
                    grant: Some(id),
                    verdict: "expired".into(),
                    bandwidth_mhz: g.block.width().to_f64_lossy(),
                    block_mhz: Some(block_f64(&g.block)),
                    occupied_mhz: 0.0,
                    area: Some(area_f64(&g.area)),
                });
            }
        }
    }

    fn blocks_near(&self, area: &CoverageArea<T>) -> Vec<SpectrumBlock<T>> {
        self.grants
            .values()
            .filter(|g| g.area.intersects(area))
            .map(|g| g.block)
            .collect()
    }

    pub fn request_spectrum(
        &mut self,
        req: &SpectrumRequest<T>,
        now: SimTime,
    ) -> Result<Decision<T>, SpectrumError> {
        req.area.validate()?;
        if !req.bandwidth.is_finite() || req.bandwidth <= T::zero() {
            return Err(SpectrumError::InvalidBandwidth(req.bandwidth.to_f64_lossy()));
        }
        self.expire(now);

        let nearby = self.blocks_near(&req.area);
        let occupied = union_width(&nearby);
        let decision = if req.bandwidth > self.band.width() {
            Decision::Rejected(Rejection {
                requester: req.requester.clone(),
                reason: RejectReason::OversizedRequest,
                occupied,
            })
        } else if let Some(block) = self.policy.assign(&self.band, &nearby, req.bandwidth) {
            let id = GrantId(self.next_id);
            self.next_id += 1;
            let grant = SpectrumGrant {
                id,
                requester: req.requester.clone(),
                block,
                area: req.area,
                qos: req.qos,
                role: req.role,
                expires: req.lease.map(|l| now + l),
            };
            self.grants.insert(id, grant.clone());
            Decision::Granted(grant)
        } else {
            Decision::Rejected(Rejection {
                requester: req.requester.clone(),
                reason: RejectReason::NoContiguousBlock,
                occupied,
            })
        };

        self.audit.push(AuditRecord {
            time_us: now.as_micros(),
            action: "request".into(),
            requester: req.requester.clone(),
            grant: decision.grant().map(|g| g.id),
            verdict: match &decision {
                Decision::Granted(_) => "granted".into(),
                Decision::Rejected(r) => format!("rejected: {}", r.reason),
            },
            bandwidth_mhz: req.bandwidth.to_f64_lossy(),
            block_mhz: decision.grant().map(|g| block_f64(&g.block)),
            occupied_mhz: occupied.to_f64_lossy(),
            area: Some(area_f64(&req.area)),
        });
        Ok(decision)
    }

    pub fn release_spectrum(
        &mut self,
        id: GrantId,
        now: SimTime,
    ) -> Result<SpectrumGrant<T>, SpectrumError> {
        let grant = self.grants.remove(&id).ok_or(SpectrumError::UnknownGrant(id))?;
        self.audit.push(AuditRecord {
            time_us: now.as_micros(),
            action: "release".into(),
            requester: grant.requester.clone(),
            grant: Some(id),
            verdict: "released".into(),
            bandwidth_mhz: grant.block.width().to_f64_lossy(),
            block_mhz: Some(block_f64(&grant.block)),
            occupied_mhz: 0.0,
            area: Some(area_f64(&grant.area)),
        });
        Ok(grant)
    }

    pub fn occupancy_at(&self, point: &Point<T>) -> Occupancy<T> {
        let entries: Vec<(GrantId, SpectrumBlock<T>)> = self
            .grants
            .values()
            .filter(|g| g.area.contains(point))
            .map(|g| (g.id, g.block))
            .collect();
        let total = entries
            .iter()
            .fold(T::zero(), |acc, (_, b)| acc + b.width());
        Occupancy { entries, total }
    }
}

/// Total width covered by a set of possibly overlapping blocks.
pub fn union_width<T: Scalar>(blocks: &[SpectrumBlock<T>]) -> T {
    let mut sorted: Vec<SpectrumBlock<T>> = blocks.to_vec();
    sorted.sort_by(|a, b| a.low.partial_cmp(&b.low).expect("finite block edges"));
    let mut total = T::zero();
    let mut current: Option<SpectrumBlock<T>> = None;
    for b in sorted {
        match current.as_mut() {
            Some(c) if b.low <= c.high => c.high = c.high.max(b.high),
            _ => {
                if let Some(c) = current.take() {
                    total = total + c.width();
                }
                current = Some(b);
            }
        }
    }
    if let Some(c) = current {
        total = total + c.width();
    }
    total
}

fn block_f64<T: Scalar>(b: &SpectrumBlock<T>) -> (f64, f64) {
    (b.low.to_f64_lossy(), b.high.to_f64_lossy())
}

fn area_f64<T: Scalar>(a: &CoverageArea<T>) -> (f64, f64, f64) {
    (
        a.center.x.to_f64_lossy(),
        a.center.y.to_f64_lossy(),
        a.radius.to_f64_lossy(),
    )
}
