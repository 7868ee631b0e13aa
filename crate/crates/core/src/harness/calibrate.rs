//! Grid search for a loop profile pair that reproduces a reference matrix.
//!
//! Candidates are tried in grid order. Each one is evaluated cell by cell in
//! the spec's evaluation order and dropped at the first cell whose class
//! differs from the reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::plant::{LoopConfig, LoopPair, PidGains};
use crate::sim::SimTime;

use super::sweep::{confusion, evaluate_cell, run_sweep, Scenario, SweepMatrix, SweepSpec};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSpace {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    pub following_error_mm: Vec<f64>,
    pub default_watchdog_us: Vec<u64>,
    pub adapted_watchdog_us: Vec<u64>,
    pub default_grace_ms: Vec<u64>,
    pub adapted_grace_ms: Vec<u64>,
    /// Give up after this many candidates.
    pub max_candidates: usize,
}

impl Default for CalibrationSpace {
    fn default() -> Self {
        CalibrationSpace {
            kp: vec![140.0, 100.0],
            ki: vec![10.0],
            kd: vec![0.3],
            following_error_mm: vec![0.1, 0.15],
            default_watchdog_us: vec![1500],
            adapted_watchdog_us: vec![1550, 2000],
            default_grace_ms: vec![1500],
            adapted_grace_ms: vec![5000],
            max_candidates: 64,
        }
    }
}

impl CalibrationSpace {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let axes = [
            self.kp.len(),
            self.ki.len(),
            self.kd.len(),
            self.following_error_mm.len(),
            self.default_watchdog_us.len(),
            self.adapted_watchdog_us.len(),
            self.default_grace_ms.len(),
            self.adapted_grace_ms.len(),
        ];
        if axes.contains(&0) {
            return Err(HarnessError::Config("every calibration axis needs at least one value".into()));
        }
        if self.max_candidates == 0 {
            return Err(HarnessError::Config("max_candidates must be positive".into()));
        }
        Ok(())
    }

    /// Valid pairs in grid order, the last axis varying fastest.
    pub fn candidates(&self, base: &LoopPair<f64>) -> Vec<LoopPair<f64>> {
        let mut out = Vec::new();
        for &kp in &self.kp {
            for &ki in &self.ki {
                for &kd in &self.kd {
                    for &fe in &self.following_error_mm {
                        for &wd in &self.default_watchdog_us {
                            for &wa in &self.adapted_watchdog_us {
                                for &gd in &self.default_grace_ms {
                                    for &ga in &self.adapted_grace_ms {
                                        let make = |b: &LoopConfig<f64>, w: u64, g: u64| LoopConfig {
                                            gains: PidGains { kp, ki, kd, ..b.gains },
                                            following_error_limit: fe,
                                            watchdog_timeout: SimTime::from_micros(w),
                                            init_grace: SimTime::from_millis(g),
                                            ..*b
                                        };
                                        let pair = LoopPair {
                                            default: make(&base.default, wd, gd),
                                            adapted: make(&base.adapted, wa, ga),
                                        };
                                        if pair.validate().is_ok() {
                                            out.push(pair);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out.truncate(self.max_candidates);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pair: LoopPair<f64>,
    pub candidates_tried: usize,
    pub matrix: SweepMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFailure {
    pub candidates_tried: usize,
    /// The candidate that matched the most cells before its first mismatch.
    pub best: Option<LoopPair<f64>>,
    /// Full sweep of `best`.
    pub best_matrix: Option<SweepMatrix>,
    /// `[reference class][achieved class]`, classes ordered pass, pass with
    /// adaptation, fail.
    pub confusion: [[usize; 3]; 3],
}

impl std::fmt::Display for CalibrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no candidate out of {} matched the reference", self.candidates_tried)?;
        let matched: usize = (0..3).map(|i| self.confusion[i][i]).sum();
        let total: usize = self.confusion.iter().flatten().sum();
        if total > 0 {
            write!(f, "; best matched {matched}/{total} cells")?;
        }
        Ok(())
    }
}

/// Number of cells matched before the first mismatch, or `None` when the
/// candidate reproduces the whole reference.
fn first_mismatch(
    spec: &SweepSpec,
    pair: &LoopPair<f64>,
    scenario: &Scenario<f64>,
    reference: &SweepMatrix,
) -> Result<Option<usize>, HarnessError> {
    let order = spec.evaluation_order();
    let chunk = if spec.parallel { rayon::current_num_threads().max(1) } else { 1 };
    let mut matched = 0;
    for batch in order.chunks(chunk) {
        let eval = |&(l, j): &(usize, usize)| {
            evaluate_cell(spec.latencies_ms[l], spec.jitters_ms[j], spec, pair, scenario)
                .map(|c| c.class == reference.cell(l, j).class)
        };
        let hits: Vec<bool> = if spec.parallel {
            batch.par_iter().map(eval).collect::<Result<_, _>>()?
        } else {
            batch.iter().map(eval).collect::<Result<_, _>>()?
        };
        for hit in hits {
            if !hit {
                return Ok(Some(matched));
            }
            matched += 1;
        }
    }
    Ok(None)
}

pub fn calibrate(
    space: &CalibrationSpace,
    base: &LoopPair<f64>,
    spec: &SweepSpec,
    scenario: &Scenario<f64>,
    reference: &SweepMatrix,
) -> Result<Result<CalibrationReport, CalibrationFailure>, HarnessError> {
    space.validate()?;
    spec.validate()?;
    if spec.latencies_ms != reference.latencies_ms || spec.jitters_ms != reference.jitters_ms {
        return Err(HarnessError::Config("sweep axes differ from the reference matrix axes".into()));
    }
    let candidates = space.candidates(base);
    let mut best: Option<(usize, LoopPair<f64>)> = None;
    for (i, pair) in candidates.iter().enumerate() {
        match first_mismatch(spec, pair, scenario, reference)? {
            None => {
                log::info!("candidate {} matches the reference", i + 1);
                let matrix = run_sweep(spec, pair, scenario)?;
                return Ok(Ok(CalibrationReport {
                    pair: *pair,
                    candidates_tried: i + 1,
                    matrix,
                }));
            }
            Some(n) => {
                log::info!("candidate {} diverged after {n} cells", i + 1);
                if best.as_ref().is_none_or(|(m, _)| n > *m) {
                    best = Some((n, *pair));
                }
            }
        }
    }
    let best_matrix = match &best {
        Some((_, pair)) => Some(run_sweep(spec, pair, scenario)?),
        None => None,
    };
    Ok(Err(CalibrationFailure {
        candidates_tried: candidates.len(),
        confusion: best_matrix.as_ref().map_or([[0; 3]; 3], |m| confusion(reference, m)),
        best: best.map(|(_, p)| p),
        best_matrix,
    }))
}
