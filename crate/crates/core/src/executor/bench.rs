use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fixtures;
use crate::planner::PlanBundle;
use crate::sim::{DisturbanceKind, NoiseModel, WorkcellDoc};

use super::metrics::RunMetrics;
use super::{run_scenario, ExecError, ExecutionConfig, Scenario};

/// Perception noise at level 1. Other levels scale every rate linearly.
pub const REFERENCE_NOISE: NoiseModel = NoiseModel {
    loss_rate: 0.005,
    misassign_rate: 0.0005,
    pose_sigma: 0.001,
};

/// Default levels of [`noise_sweep`].
pub const SWEEP_LEVELS: [f64; 3] = [0.0, 1.0, 2.0];

/// Noise model at `level`, clamped to valid probabilities.
pub fn noise_at(level: f64) -> NoiseModel {
    NoiseModel {
        loss_rate: (REFERENCE_NOISE.loss_rate * level).min(1.0),
        misassign_rate: (REFERENCE_NOISE.misassign_rate * level).min(1.0),
        pose_sigma: REFERENCE_NOISE.pose_sigma * level,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub task_lengths: Vec<usize>,
    /// `None` is the undisturbed column.
    pub disturbances: Vec<Option<DisturbanceKind>>,
    pub trials: usize,
    pub master_seed: u64,
    /// Scale of [`REFERENCE_NOISE`]; 0 is exact perception.
    pub noise_level: f64,
    pub exec: ExecutionConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            task_lengths: fixtures::TASK_LENGTHS.to_vec(),
            disturbances: vec![
                None,
                Some(DisturbanceKind::I),
                Some(DisturbanceKind::II),
                Some(DisturbanceKind::III),
            ],
            trials: 15,
            master_seed: 0,
            noise_level: 0.0,
            exec: ExecutionConfig::default(),
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn kind_code(kind: Option<DisturbanceKind>) -> u64 {
    match kind {
        None => 0,
        Some(DisturbanceKind::I) => 1,
        Some(DisturbanceKind::II) => 2,
        Some(DisturbanceKind::III) => 3,
    }
}

fn kind_label(kind: Option<DisturbanceKind>) -> String {
    kind.map_or_else(|| "none".to_owned(), |k| k.to_string())
}

/// Seed of one trial, independent of scheduling order.
pub fn derive_seed(
    master: u64,
    task_length: usize,
    kind: Option<DisturbanceKind>,
    trial: usize,
) -> u64 {
    let mut h = mix(master);
    for v in [task_length as u64, kind_code(kind), trial as u64] {
        h = mix(h ^ v);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task_length: usize,
    pub disturbance: Option<DisturbanceKind>,
    pub trial: usize,
    pub seed: u64,
    pub noise_level: f64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub task_length: usize,
    pub disturbance: Option<DisturbanceKind>,
    pub trials: usize,
    pub ts_rate: f64,
    pub cr_mean: f64,
    /// `None` when no trial of the cell had an accepted disturbance.
    pub drr_mean: Option<f64>,
    pub ticks_mean: f64,
    pub replans_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub trials: Vec<TrialResult>,
    pub cells: Vec<CellSummary>,
}

impl BenchTable {
    fn from_trials(trials: Vec<TrialResult>) -> Self {
        let mut groups: BTreeMap<(usize, u64), Vec<&TrialResult>> = BTreeMap::new();
        for t in &trials {
            groups
                .entry((t.task_length, kind_code(t.disturbance)))
                .or_default()
                .push(t);
        }
        let cells = groups
            .into_values()
            .map(|g| {
                let n = g.len() as f64;
                let mean = |f: &dyn Fn(&RunMetrics) -> f64| {
                    g.iter().map(|t| f(&t.metrics)).sum::<f64>() / n
                };
                let drr: Vec<f64> = g
                    .iter()
                    .filter(|t| t.metrics.drr_applicable)
                    .map(|t| t.metrics.drr)
                    .collect();
                CellSummary {
                    task_length: g[0].task_length,
                    disturbance: g[0].disturbance,
                    trials: g.len(),
                    ts_rate: mean(&|m| if m.ts { 1.0 } else { 0.0 }),
                    cr_mean: mean(&|m| m.cr),
                    drr_mean: (!drr.is_empty()).then(|| drr.iter().sum::<f64>() / drr.len() as f64),
                    ticks_mean: mean(&|m| m.ticks as f64),
                    replans_mean: mean(&|m| m.replans as f64),
                }
            })
            .collect();
        Self { trials, cells }
    }

    /// One row per trial. DRR is empty when not applicable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_length,disturbance,trial,TS,CR,DRR,ticks,replans,noise\n");
        for t in &self.trials {
            let m = &t.metrics;
            let drr = if m.drr_applicable {
                format!("{:.4}", m.drr)
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{},{},{},{}",
                t.task_length,
                kind_label(t.disturbance),
                t.trial,
                u8::from(m.ts),
                m.cr,
                drr,
                m.ticks,
                m.replans,
                t.noise_level
            );
        }
        out
    }

    /// One row per cell.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("task_length,disturbance,trials,TS,CR,DRR,ticks,replans\n");
        for c in &self.cells {
            let drr = c
                .drr_mean
                .map_or_else(|| "N/A".to_owned(), |d| format!("{d:.4}"));
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{},{:.1},{:.2}",
                c.task_length,
                kind_label(c.disturbance),
                c.trials,
                c.ts_rate,
                c.cr_mean,
                drr,
                c.ticks_mean,
                c.replans_mean
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("bench table serializes")
    }

    pub fn cell(
        &self,
        task_length: usize,
        disturbance: Option<DisturbanceKind>,
    ) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.task_length == task_length && c.disturbance == disturbance)
    }
}

/// The scenario of one trial: the bundled scenario with its displacement
/// magnitude scaled by a seeded factor in [1, 1.5].
fn trial_scenario(
    task_length: usize,
    kind: Option<DisturbanceKind>,
    seed: u64,
    noise: NoiseModel,
) -> Result<Scenario, ExecError> {
    let text = fixtures::scenario(task_length, kind).ok_or_else(|| {
        ExecError::PlanMismatch(format!("no scenario for task length {task_length}"))
    })?;
    let mut scenario =
        Scenario::from_json(text).map_err(|e| ExecError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in &mut scenario.disturbances {
        let f: f64 = rng.random_range(1.0..1.5);
        d.payload.displacement = d.payload.displacement.map(|v| v * f);
    }
    scenario.perception_noise = noise;
    scenario.seed = seed;
    Ok(scenario)
}

/// Runs the task-length by disturbance matrix in parallel. `plans` maps
/// task length to its plan.
pub fn bench(
    plans: &BTreeMap<usize, PlanBundle>,
    workcell: &WorkcellDoc,
    cfg: &BenchConfig,
) -> Result<BenchTable, ExecError> {
    cfg.exec.validate()?;
    let noise = noise_at(cfg.noise_level);
    noise.validate()?;
    let mut jobs = Vec::new();
    for &len in &cfg.task_lengths {
        if !plans.contains_key(&len) {
            return Err(ExecError::PlanMismatch(format!(
                "no plan for task length {len}"
            )));
        }
        for &kind in &cfg.disturbances {
            for trial in 0..cfg.trials {
                jobs.push((len, kind, trial));
            }
        }
    }
    let trials = jobs
        .into_par_iter()
        .map(|(len, kind, trial)| {
            let seed = derive_seed(cfg.master_seed, len, kind, trial);
            let scenario = trial_scenario(len, kind, seed, noise)?;
            let exec = ExecutionConfig { seed, ..cfg.exec };
            let (_, metrics) = run_scenario(&plans[&len], workcell, &scenario, exec)?;
            Ok(TrialResult {
                task_length: len,
                disturbance: kind,
                trial,
                seed,
                noise_level: cfg.noise_level,
                metrics,
            })
        })
        .collect::<Result<Vec<_>, ExecError>>()?;
    Ok(BenchTable::from_trials(trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub noise: NoiseModel,
    pub cr_mean: f64,
    pub ts_rate: f64,
    pub drr_mean: Option<f64>,
}

/// Runs the bench at each noise level and averages over the whole matrix.
pub fn noise_sweep(
    plans: &BTreeMap<usize, PlanBundle>,
    workcell: &WorkcellDoc,
    cfg: &BenchConfig,
    levels: &[f64],
) -> Result<Vec<SweepRow>, ExecError> {
    levels
        .iter()
        .map(|&level| {
            let table = bench(
                plans,
                workcell,
                &BenchConfig {
                    noise_level: level,
                    ..cfg.clone()
                },
            )?;
            let n = table.trials.len().max(1) as f64;
            let drr: Vec<f64> = table
                .trials
                .iter()
                .filter(|t| t.metrics.drr_applicable)
                .map(|t| t.metrics.drr)
                .collect();
            Ok(SweepRow {
                level,
                noise: noise_at(level),
                cr_mean: table.trials.iter().map(|t| t.metrics.cr).sum::<f64>() / n,
                ts_rate: table.trials.iter().filter(|t| t.metrics.ts).count() as f64 / n,
                drr_mean: (!drr.is_empty()).then(|| drr.iter().sum::<f64>() / drr.len() as f64),
            })
        })
        .collect()
}
