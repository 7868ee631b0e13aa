use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelProfile, JitterDistribution};
use crate::plant::{
    run_trial, AxisParams, ChannelPair, LoopConfig, LoopPair, Topology, Trajectory, TrialSetup,
    TrialVerdict,
};
use crate::scalar::Scalar;
use crate::sim::SimTime;

use super::HarnessError;

/// Reference latency axis, ms.
pub const TABLE_LATENCIES_MS: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0];
/// Reference jitter axis, ms.
pub const TABLE_JITTERS_MS: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictClass {
    Pass,
    PassWithAdaptation,
    Fail,
}

impl VerdictClass {
    pub fn symbol(self) -> &'static str {
        match self {
            VerdictClass::Pass => "✓",
            VerdictClass::PassWithAdaptation => "(✓)",
            VerdictClass::Fail => "x",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictClass::Pass => "pass",
            VerdictClass::PassWithAdaptation => "pass-with-adaptation",
            VerdictClass::Fail => "fail",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [VerdictClass::Pass, VerdictClass::PassWithAdaptation, VerdictClass::Fail]
            .into_iter()
            .find(|c| c.as_str() == s || c.symbol() == s)
    }

    pub fn index(self) -> usize {
        match self {
            VerdictClass::Pass => 0,
            VerdictClass::PassWithAdaptation => 1,
            VerdictClass::Fail => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalOrder {
    /// Highest latency first, then highest jitter.
    DescendingSeverity,
    Ascending,
    /// A seeded permutation.
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub latencies_ms: Vec<f64>,
    pub jitters_ms: Vec<f64>,
    pub seeds_per_cell: u32,
    pub trial_length_s: f64,
    /// Seeds are `base_seed, base_seed + 1, ...`; every cell uses the same list.
    pub base_seed: u64,
    pub order: EvalOrder,
    pub parallel: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            latencies_ms: TABLE_LATENCIES_MS.to_vec(),
            jitters_ms: TABLE_JITTERS_MS.to_vec(),
            seeds_per_cell: 3,
            trial_length_s: 60.0,
            base_seed: 1,
            order: EvalOrder::DescendingSeverity,
            parallel: true,
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x >= 0.0) && v.windows(2).all(|w| w[0] < w[1])
}

impl SweepSpec {
    pub fn single(latency_ms: f64, jitter_ms: f64) -> Self {
        SweepSpec {
            latencies_ms: vec![latency_ms],
            jitters_ms: vec![jitter_ms],
            ..SweepSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.latencies_ms.is_empty() || self.jitters_ms.is_empty() {
            return Err(HarnessError::Config("sweep axes must not be empty".into()));
        }
        if !strictly_increasing(&self.latencies_ms) || !strictly_increasing(&self.jitters_ms) {
            return Err(HarnessError::Config("sweep axis values must be strictly increasing".into()));
        }
        if self.seeds_per_cell == 0 {
            return Err(HarnessError::Config("at least one seed per cell is required".into()));
        }
        if !(self.trial_length_s.is_finite() && self.trial_length_s > 0.0) {
            return Err(HarnessError::Config("trial length must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..u64::from(self.seeds_per_cell)).map(|i| self.base_seed + i).collect()
    }

    pub fn trial_length(&self) -> SimTime {
        SimTime::from_secs_f64(self.trial_length_s)
    }

    /// `(latency index, jitter index)` pairs in evaluation order.
    pub fn evaluation_order(&self) -> Vec<(usize, usize)> {
        let mut cells: Vec<(usize, usize)> = (0..self.latencies_ms.len())
            .flat_map(|l| (0..self.jitters_ms.len()).map(move |j| (l, j)))
            .collect();
        match self.order {
            EvalOrder::Ascending => {}
            EvalOrder::DescendingSeverity => cells.reverse(),
            EvalOrder::Shuffled(seed) => {
                use rand::seq::SliceRandom;
                let mut rng = crate::sim::RngStream::new(seed, 0);
                cells.shuffle(&mut rng);
            }
        }
        cells
    }
}

/// Everything about a trial other than the loop profile and the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub axis: AxisParams<T>,
    pub trajectory: Trajectory<T>,
    pub topology: Topology,
    pub distribution: JitterDistribution,
    pub loss_rate: f64,
    pub reorder_allowed: bool,
}

impl<T: Scalar> Default for Scenario<T> {
    fn default() -> Self {
        Scenario {
            axis: AxisParams::default(),
            trajectory: Trajectory::default(),
            topology: Topology::default(),
            distribution: JitterDistribution::Uniform,
            loss_rate: 0.0,
            reorder_allowed: false,
        }
    }
}

impl<T: Scalar> Scenario<T> {
    pub fn trial(
        &self,
        loop_config: LoopConfig<T>,
        latency_ms: f64,
        jitter_ms: f64,
        seed: u64,
        trial_length: SimTime,
    ) -> TrialSetup<T> {
        let profile = ChannelProfile::from_millis(latency_ms, jitter_ms)
            .with_distribution(self.distribution)
            .with_loss(self.loss_rate)
            .with_reorder(self.reorder_allowed);
        TrialSetup {
            axis: self.axis,
            trajectory: self.trajectory.clone(),
            topology: self.topology.clone(),
            trial_length,
            seed,
            ..TrialSetup::new(loop_config, ChannelPair::symmetric(profile))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub default: TrialVerdict<f64>,
    /// Only run when the default profile failed on some seed of the cell.
    pub adapted: Option<TrialVerdict<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub class: VerdictClass,
    pub seeds: Vec<SeedOutcome>,
}

impl CellVerdict {
    pub fn classify(seeds: &[SeedOutcome]) -> VerdictClass {
        if seeds.iter().all(|s| s.default.passed()) {
            VerdictClass::Pass
        } else if seeds.iter().all(|s| s.adapted.is_some_and(|a| a.passed())) {
            VerdictClass::PassWithAdaptation
        } else {
            VerdictClass::Fail
        }
    }

    /// Whether `class` agrees with the per-seed details. Cells without
    /// details are trivially consistent.
    pub fn is_consistent(&self) -> bool {
        self.seeds.is_empty() || Self::classify(&self.seeds) == self.class
    }
}

/// Verdicts laid out with jitter as rows and latency as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMatrix {
    pub latencies_ms: Vec<f64>,
    pub jitters_ms: Vec<f64>,
    /// Row-major: `cells[j * latencies.len() + l]`.
    pub cells: Vec<CellVerdict>,
}

impl SweepMatrix {
    pub fn cell(&self, latency_idx: usize, jitter_idx: usize) -> &CellVerdict {
        &self.cells[jitter_idx * self.latencies_ms.len() + latency_idx]
    }

    pub fn class_at(&self, latency_ms: f64, jitter_ms: f64) -> Option<VerdictClass> {
        self.cells
            .iter()
            .find(|c| c.latency_ms == latency_ms && c.jitter_ms == jitter_ms)
            .map(|c| c.class)
    }

    /// `rows[j][l]`.
    pub fn classes(&self) -> Vec<Vec<VerdictClass>> {
        (0..self.jitters_ms.len())
            .map(|j| (0..self.latencies_ms.len()).map(|l| self.cell(l, j).class).collect())
            .collect()
    }

    /// Pairs of a failing cell and a passing cell at least as impaired on both axes.
    pub fn monotonicity_violations(&self) -> Vec<((f64, f64), (f64, f64))> {
        let mut out = Vec::new();
        for a in &self.cells {
            if a.class != VerdictClass::Fail {
                continue;
            }
            for b in &self.cells {
                if b.class != VerdictClass::Fail && b.latency_ms >= a.latency_ms && b.jitter_ms >= a.jitter_ms {
                    out.push(((a.latency_ms, a.jitter_ms), (b.latency_ms, b.jitter_ms)));
                }
            }
        }
        out
    }
}

/// Runs every seed of one cell, trying the adapted profile only if the
/// default one failed somewhere.
pub fn evaluate_cell<T: Scalar>(
    latency_ms: f64,
    jitter_ms: f64,
    spec: &SweepSpec,
    pair: &LoopPair<T>,
    scenario: &Scenario<T>,
) -> Result<CellVerdict, HarnessError> {
    let run = |lc: LoopConfig<T>, seed: u64| -> Result<TrialVerdict<f64>, HarnessError> {
        let setup = scenario.trial(lc, latency_ms, jitter_ms, seed, spec.trial_length());
        Ok(run_trial(&setup)?.verdict.to_f64())
    };
    let mut seeds = Vec::with_capacity(spec.seeds_per_cell as usize);
    for seed in spec.seeds() {
        seeds.push(SeedOutcome {
            seed,
            default: run(pair.default, seed)?,
            adapted: None,
        });
    }
    if !seeds.iter().all(|s| s.default.passed()) {
        for s in &mut seeds {
            s.adapted = Some(run(pair.adapted, s.seed)?);
        }
    }
    Ok(CellVerdict {
        latency_ms,
        jitter_ms,
        class: CellVerdict::classify(&seeds),
        seeds,
    })
}

pub fn run_sweep<T: Scalar>(
    spec: &SweepSpec,
    pair: &LoopPair<T>,
    scenario: &Scenario<T>,
) -> Result<SweepMatrix, HarnessError> {
    spec.validate()?;
    pair.validate()?;
    let order = spec.evaluation_order();
    let eval = |&(l, j): &(usize, usize)| {
        evaluate_cell(spec.latencies_ms[l], spec.jitters_ms[j], spec, pair, scenario).map(|c| ((l, j), c))
    };
    let results: Vec<((usize, usize), CellVerdict)> = if spec.parallel {
        order.par_iter().map(eval).collect::<Result<_, _>>()?
    } else {
        order.iter().map(eval).collect::<Result<_, _>>()?
    };
    let width = spec.latencies_ms.len();
    let mut slots: Vec<Option<CellVerdict>> = vec![None; width * spec.jitters_ms.len()];
    for ((l, j), cell) in results {
        slots[j * width + l] = Some(cell);
    }
    Ok(SweepMatrix {
        latencies_ms: spec.latencies_ms.clone(),
        jitters_ms: spec.jitters_ms.clone(),
        cells: slots.into_iter().map(|c| c.expect("every cell evaluated")).collect(),
    })
}

/// Expected verdicts over the default axes, indexed `[jitter][latency]`.
pub fn reference_table() -> SweepMatrix {
    use VerdictClass::{Fail as X, Pass as P, PassWithAdaptation as A};
    let rows = [
        [P, P, P, P, P, X],
        [P, P, P, P, P, X],
        [P, P, P, P, P, X],
        [P, A, A, A, A, X],
        [X, X, X, X, X, X],
    ];
    let mut cells = Vec::new();
    for (j, row) in rows.iter().enumerate() {
        for (l, class) in row.iter().enumerate() {
            cells.push(CellVerdict {
                latency_ms: TABLE_LATENCIES_MS[l],
                jitter_ms: TABLE_JITTERS_MS[j],
                class: *class,
                seeds: Vec::new(),
            });
        }
    }
    SweepMatrix {
        latencies_ms: TABLE_LATENCIES_MS.to_vec(),
        jitters_ms: TABLE_JITTERS_MS.to_vec(),
        cells,
    }
}

/// Counts `[reference class][achieved class]` over cells present in both.
pub fn confusion(reference: &SweepMatrix, achieved: &SweepMatrix) -> [[usize; 3]; 3] {
    let mut m = [[0; 3]; 3];
    for cell in &achieved.cells {
        if let Some(r) = reference.class_at(cell.latency_ms, cell.jitter_ms) {
            m[r.index()][cell.class.index()] += 1;
        }
    }
    m
}
