use std::fmt;

use serde::{Deserialize, Serialize};

use crate::atom::{ActionInstance, ObjectId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DisturbanceKind {
    /// Displaces an object of the action in progress.
    I,
    /// Displaces an object no action has touched yet.
    II,
    /// Detaches a part from the object it was assembled to.
    III,
}

impl fmt::Display for DisturbanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisturbanceKind::I => "I",
            DisturbanceKind::II => "II",
            DisturbanceKind::III => "III",
        })
    }
}

impl std::str::FromStr for DisturbanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "I" => Ok(Self::I),
            "II" => Ok(Self::II),
            "III" => Ok(Self::III),
            other => Err(format!("unknown disturbance kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// As soon as the stage is the current one.
    Start,
    /// While a given action of the stage is in progress.
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePhase {
    pub stage: usize,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionInstance>,
    /// Minimum progress in ticks of `action`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Trigger {
    AtTick { at_tick: u64 },
    AtStagePhase { at_stage_phase: StagePhase },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    pub object: ObjectId,
    /// Planar displacement `[dx, dy]`.
    pub displacement: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detach_from: Option<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub trigger: Trigger,
    pub payload: Payload,
}
