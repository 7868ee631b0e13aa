//! Timed spectrum request/release scripts.
//!
//! ```text
//! # comment; `#` starts a comment unless followed by a grant id
//! band 3700 3800
//! 0    static-plan
//! 10   request agv-ring 400 0 30 20 lease=5000 role=sensor-data qos=sensor
//! 20   release agv-ring
//! 25   release #3
//! 30   query 0 0
//! ```
//!
//! Times are in milliseconds and must not decrease. Coordinates and radii
//! are metres, bandwidths MHz. `static-plan` takes an optional `x y radius`
//! site. `release` accepts a grant id or a requester name, which releases
//! that requester's most recent active grant.

use serde::{Deserialize, Serialize};

use crate::plant::QosProfile;
use crate::spectrum::{
    default_site, AuditRecord, Band, CoverageArea, Decision, GrantId, NetworkRole, Point,
    SpectrumError, SpectrumManager, SpectrumRequest,
};
use crate::sim::SimTime;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptAction {
    StaticPlan(Option<CoverageArea<f64>>),
    Request(SpectrumRequest<f64>),
    Release(ReleaseTarget),
    Query(Point<f64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReleaseTarget {
    Grant(GrantId),
    Requester(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub line: usize,
    pub time: SimTime,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumScript {
    pub band: Band<f64>,
    pub steps: Vec<ScriptStep>,
}

fn err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        line,
        message: message.into(),
    }
}

fn num(tok: Option<&str>, what: &str, line: usize) -> Result<f64, HarnessError> {
    let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
    let v: f64 = tok.parse().map_err(|_| err(line, format!("{what} {tok:?} is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(line, format!("{what} must be finite")))
    }
}

fn area(x: f64, y: f64, r: f64, line: usize) -> Result<CoverageArea<f64>, HarnessError> {
    CoverageArea::new(x, y, r).map_err(|e| err(line, e.to_string()))
}

fn parse_role(s: &str, line: usize) -> Result<NetworkRole, HarnessError> {
    match s {
        "control-urllc" => Ok(NetworkRole::ControlUrllc),
        "sensor-data" => Ok(NetworkRole::SensorData),
        "overlay" => Ok(NetworkRole::Overlay),
        "unspecified" => Ok(NetworkRole::Unspecified),
        _ => Err(err(line, format!("unknown role {s:?}"))),
    }
}

fn parse_qos(s: &str, line: usize) -> Result<QosProfile, HarnessError> {
    match s {
        "urllc" => Ok(QosProfile::urllc()),
        "sensor" => Ok(QosProfile::sensor()),
        "relaxed" => Ok(QosProfile::relaxed()),
        _ => Err(err(line, format!("unknown qos profile {s:?}"))),
    }
}

impl SpectrumScript {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut band = Band::local_default();
        let mut steps = Vec::new();
        let mut last = SimTime::ZERO;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut toks = raw
                .split_whitespace()
                .take_while(|t| !t.starts_with('#') || t[1..].parse::<u64>().is_ok());
            let Some(first) = toks.next() else {
                continue;
            };
            if first == "band" {
                if !steps.is_empty() {
                    return Err(err(line, "band must be set before any timed step"));
                }
                let low = num(toks.next(), "band low edge", line)?;
                let high = num(toks.next(), "band high edge", line)?;
                band = Band::new(low, high).map_err(|e| err(line, e.to_string()))?;
                continue;
            }
            let ms = num(Some(first), "time", line)?;
            if ms < 0.0 {
                return Err(err(line, "time must be non-negative"));
            }
            let time = SimTime::from_millis_f64(ms);
            if time < last {
                return Err(err(line, "times must not decrease"));
            }
            last = time;
            let verb = toks.next().ok_or_else(|| err(line, "missing action"))?;
            let action = match verb {
                "static-plan" => {
                    let rest: Vec<&str> = toks.by_ref().collect();
                    match rest.len() {
                        0 => ScriptAction::StaticPlan(None),
                        3 => {
                            let mut it = rest.into_iter();
                            let x = num(it.next(), "x", line)?;
                            let y = num(it.next(), "y", line)?;
                            let r = num(it.next(), "radius", line)?;
                            ScriptAction::StaticPlan(Some(area(x, y, r, line)?))
                        }
                        _ => return Err(err(line, "static-plan takes no arguments or `x y radius`")),
                    }
                }
                "request" => {
                    let who = toks.next().ok_or_else(|| err(line, "missing requester"))?;
                    let x = num(toks.next(), "x", line)?;
                    let y = num(toks.next(), "y", line)?;
                    let r = num(toks.next(), "radius", line)?;
                    let bw = num(toks.next(), "bandwidth", line)?;
                    if bw <= 0.0 {
                        return Err(err(line, "bandwidth must be positive"));
                    }
                    let mut req = SpectrumRequest::new(who, area(x, y, r, line)?, bw);
                    for opt in toks.by_ref() {
                        let (k, v) = opt
                            .split_once('=')
                            .ok_or_else(|| err(line, format!("expected key=value, found {opt:?}")))?;
                        req = match k {
                            "lease" => req.with_lease(SimTime::from_millis_f64(num(Some(v), "lease", line)?)),
                            "role" => req.with_role(parse_role(v, line)?),
                            "qos" => req.with_qos(parse_qos(v, line)?),
                            _ => return Err(err(line, format!("unknown option {k:?}"))),
                        };
                    }
                    ScriptAction::Request(req)
                }
                "release" => {
                    let target = toks.next().ok_or_else(|| err(line, "missing grant id or requester"))?;
                    match target.strip_prefix('#') {
                        Some(id) => ScriptAction::Release(ReleaseTarget::Grant(GrantId(
                            id.parse().map_err(|_| err(line, format!("bad grant id {target:?}")))?,
                        ))),
                        None => ScriptAction::Release(ReleaseTarget::Requester(target.to_string())),
                    }
                }
                "query" => {
                    let x = num(toks.next(), "x", line)?;
                    let y = num(toks.next(), "y", line)?;
                    ScriptAction::Query(Point::new(x, y))
                }
                other => return Err(err(line, format!("unknown action {other:?}"))),
            };
            if let Some(extra) = toks.next() {
                return Err(err(line, format!("unexpected token {extra:?}")));
            }
            steps.push(ScriptStep { line, time, action });
        }
        Ok(SpectrumScript { band, steps })
    }
}

/// One decision taken while replaying a script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub line: usize,
    pub time_us: u64,
    pub action: String,
    pub requester: String,
    pub outcome: String,
    pub grant: Option<GrantId>,
    pub block_mhz: Option<(f64, f64)>,
    pub occupied_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteOccupancy {
    pub x: f64,
    pub y: f64,
    pub total_mhz: f64,
    pub grants: Vec<GrantId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLog {
    pub events: Vec<ScriptEvent>,
    pub audit: Vec<AuditRecord>,
    /// Occupancy at the centre of every grant still active at the end.
    pub occupancy: Vec<SiteOccupancy>,
}

impl ScenarioLog {
    pub fn granted(&self) -> usize {
        self.events.iter().filter(|e| e.outcome == "granted").count()
    }

    pub fn rejected(&self) -> usize {
        self.events.iter().filter(|e| e.outcome.starts_with("rejected")).count()
    }
}

pub fn run_spectrum_scenario(script: &SpectrumScript) -> Result<ScenarioLog, HarnessError> {
    let mut mgr = SpectrumManager::new(script.band);
    let mut events = Vec::new();
    let at_line = |line: usize| move |e: SpectrumError| err(line, e.to_string());
    for step in &script.steps {
        let time_us = step.time.as_micros();
        match &step.action {
            ScriptAction::StaticPlan(site) => {
                mgr.expire(step.time);
                let site = site.unwrap_or_else(default_site);
                let granted = mgr.configure_static_plan_at(site).map_err(at_line(step.line))?;
                for g in granted {
                    events.push(ScriptEvent {
                        line: step.line,
                        time_us,
                        action: "static-plan".into(),
                        requester: g.requester.clone(),
                        outcome: "granted".into(),
                        grant: Some(g.id),
                        block_mhz: Some((g.block.low, g.block.high)),
                        occupied_mhz: 0.0,
                    });
                }
            }
            ScriptAction::Request(req) => {
                let decision = mgr.request_spectrum(req, step.time).map_err(at_line(step.line))?;
                let (outcome, grant, block, occupied) = match decision {
                    Decision::Granted(g) => ("granted".to_string(), Some(g.id), Some((g.block.low, g.block.high)), 0.0),
                    Decision::Rejected(r) => (format!("rejected: {}", r.reason), None, None, r.occupied),
                };
                events.push(ScriptEvent {
                    line: step.line,
                    time_us,
                    action: "request".into(),
                    requester: req.requester.clone(),
                    outcome,
                    grant,
                    block_mhz: block,
                    occupied_mhz: occupied,
                });
            }
            ScriptAction::Release(target) => {
                mgr.expire(step.time);
                let id = match target {
                    ReleaseTarget::Grant(id) => Some(*id),
                    ReleaseTarget::Requester(name) => mgr
                        .active_grants()
                        .filter(|g| &g.requester == name)
                        .map(|g| g.id)
                        .max(),
                };
                let (outcome, requester, block) = match id.map(|id| mgr.release_spectrum(id, step.time)) {
                    Some(Ok(g)) => ("released".to_string(), g.requester, Some((g.block.low, g.block.high))),
                    _ => (
                        "not-found".to_string(),
                        match target {
                            ReleaseTarget::Requester(n) => n.clone(),
                            ReleaseTarget::Grant(id) => id.to_string(),
                        },
                        None,
                    ),
                };
                events.push(ScriptEvent {
                    line: step.line,
                    time_us,
                    action: "release".into(),
                    requester,
                    outcome,
                    grant: id,
                    block_mhz: block,
                    occupied_mhz: 0.0,
                });
            }
            ScriptAction::Query(p) => {
                mgr.expire(step.time);
                let occ = mgr.occupancy_at(p);
                events.push(ScriptEvent {
                    line: step.line,
                    time_us,
                    action: "query".into(),
                    requester: String::new(),
                    outcome: format!("{} grants", occ.entries.len()),
                    grant: None,
                    block_mhz: None,
                    occupied_mhz: occ.total,
                });
            }
        }
    }
    let mut occupancy: Vec<SiteOccupancy> = Vec::new();
    for g in mgr.active_grants() {
        let c = g.area.center;
        if occupancy.iter().any(|o| o.x == c.x && o.y == c.y) {
            continue;
        }
        let occ = mgr.occupancy_at(&c);
        occupancy.push(SiteOccupancy {
            x: c.x,
            y: c.y,
            total_mhz: occ.total,
            grants: occ.entries.iter().map(|(id, _)| *id).collect(),
        });
    }
    Ok(ScenarioLog {
        events,
        audit: mgr.audit_log().to_vec(),
        occupancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> ScenarioLog {
        run_spectrum_scenario(&SpectrumScript::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn static_plan_saturates_the_site() {
        let log = run("0 static-plan\n");
        assert_eq!(log.granted(), 3);
        assert_eq!(log.occupancy.len(), 1);
        assert_eq!(log.occupancy[0].total_mhz, 100.0);
        assert_eq!(log.occupancy[0].grants.len(), 3);
    }

    #[test]
    fn disjoint_sites_both_get_the_whole_band() {
        let log = run("0 request a 0 0 10 100\n0 request b 500 0 10 100\n");
        assert_eq!(log.granted(), 2);
        assert!(log.events.iter().all(|e| e.block_mhz == Some((3700.0, 3800.0))));
    }

    #[test]
    fn release_by_name_and_id() {
        let log = run(
            "band 3700 3800\n0 request a 0 0 10 60\n1 request b 0 0 10 60\n2 release a\n3 request b 0 0 10 60\n4 release #2\n5 release #2\n",
        );
        let outcomes: Vec<&str> = log.events.iter().map(|e| e.outcome.as_str()).collect();
        assert_eq!(
            outcomes,
            ["granted", "rejected: no contiguous free block", "released", "granted", "released", "not-found"]
        );
    }

    #[test]
    fn leases_and_queries() {
        let log = run("0 request a 0 0 10 40 lease=100\n50 query 0 0\n150 query 0 0\n");
        assert_eq!(log.events[1].occupied_mhz, 40.0);
        assert_eq!(log.events[2].occupied_mhz, 0.0);
        assert!(log.audit.iter().any(|a| a.action == "expire"));
    }

    #[test]
    fn parse_errors_report_line_numbers() {
        let cases = [
            ("0 request a 0 0 10\n", 1),
            ("# header\n\n5 request a 0 0 10 20\n2 query 0 0\n", 4),
            ("0 request a 0 0 -3 20\n", 1),
            ("0 frobnicate\n", 1),
            ("0 query 1 2\nband 1 2\n", 2),
            ("0 request a 0 0 1 20 colour=red\n", 1),
        ];
        for (text, want) in cases {
            match SpectrumScript::parse(text) {
                Err(HarnessError::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn oversized_request_is_rejected_in_log() {
        let log = run("0 request big 0 0 10 150\n");
        assert_eq!(log.events[0].outcome, "rejected: oversized request");
    }
}
