//! Stage-wise reactive execution of a plan against the simulated workcell:
//! precondition extension, self-recovery, rollback, replanning and metrics.

mod bench;
mod metrics;
mod replan;
mod run;
mod trace;

pub use bench::{
    bench, derive_seed, noise_at, noise_sweep, BenchConfig, BenchTable, CellSummary, SweepRow,
    TrialResult, REFERENCE_NOISE, SWEEP_LEVELS,
};
pub use metrics::{compute_metrics, RunMetrics};
pub use replan::{BackendReplanner, FallbackReplanner, GatedReplanner, Replanner};
pub use run::{run, run_scenario, Run};
pub use trace::{Event, EventKind, ExecutionTrace, UpdateSource};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::Atom;
use crate::bt::{find_unit, BehaviorTree, BtError, BtNode, NodeId, TreeMeta};
use crate::sim::{Disturbance, NoiseModel, SimError};
use crate::world::UpdateConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    /// Ticks per simulated second.
    pub frequency: f64,
    pub max_replans_per_stage: u32,
    pub max_ticks: u64,
    pub seed: u64,
    pub update: UpdateConfig,
    /// Compare belief relations with ground truth after every maintenance
    /// pass when perception is exact and nothing is disturbed.
    pub check_sync: bool,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            frequency: 10.0,
            max_replans_per_stage: 3,
            max_ticks: 10_000,
            seed: 0,
            update: UpdateConfig::default(),
            check_sync: true,
        }
    }
}

impl ExecutionConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(ExecError::InvalidConfig(
                "frequency must be positive".into(),
            ));
        }
        if self.max_replans_per_stage == 0 || self.max_ticks == 0 {
            return Err(ExecError::InvalidConfig("bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Scenario document: task length, scripted disturbances, perception noise
/// and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub task_length: usize,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub perception_noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn undisturbed(task_length: usize, seed: u64) -> Self {
        Self {
            task_length,
            disturbances: Vec::new(),
            perception_noise: NoiseModel::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("plan does not fit the scenario: {0}")]
    PlanMismatch(String),
    /// Belief and ground truth disagree although perception is exact.
    #[error("belief diverged from ground truth at tick {tick}: believed {believed:?}, actual {actual:?}")]
    EnvDesync {
        tick: u64,
        believed: Vec<Atom>,
        actual: Vec<Atom>,
    },
    #[error("run already finished")]
    Finished,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bt(#[from] BtError),
}

/// Id of the root of an extended tree.
pub const EXTENSION_ROOT: &str = "ext";

/// Id of the guard on achieved relation `j`.
pub fn guard_id(j: usize) -> NodeId {
    NodeId::new(format!("{EXTENSION_ROOT}.r{j}"))
}

/// Stage index guarded by `id`, if it is an extension guard.
pub fn guarded_stage(id: &NodeId) -> Option<usize> {
    id.as_str()
        .strip_prefix(EXTENSION_ROOT)?
        .strip_prefix(".r")?
        .parse()
        .ok()
}

/// `Sequence(Condition(r_0), ..., Condition(r_{i-1}), b_i)`.
pub fn extend(tree: &BehaviorTree, achieved: &[Atom]) -> BehaviorTree {
    let mut children: Vec<BtNode> = achieved
        .iter()
        .enumerate()
        .map(|(j, r)| BtNode::condition(guard_id(j), r.clone()))
        .collect();
    children.push(tree.root.clone());
    BehaviorTree::with_meta(
        BtNode::sequence(EXTENSION_ROOT, children),
        TreeMeta {
            subtask: tree.meta.subtask,
            goal: tree.meta.goal.clone(),
            provenance: tree.meta.provenance,
        },
    )
}

/// The action unit of the stage subtree whose target restores `violated`.
pub fn self_recovery_probe(subtree: &BehaviorTree, violated: &Atom) -> Option<NodeId> {
    find_unit(&subtree.root, violated).map(|u| u.id.clone())
}

#[cfg(test)]
mod tests;
