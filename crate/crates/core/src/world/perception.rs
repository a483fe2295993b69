//! Report formats produced by the two perception proxies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::{ActionInstance, ObjectId};

use super::state::{Pose, Position, WorldState};

/// Whole-scene tracking reading for one object.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct M1Entry {
    /// `None` while the track is lost.
    pub position: Option<Position>,
    #[serde(default)]
    pub lost: bool,
    #[serde(default)]
    pub misassigned: bool,
}

/// Whole-scene tracking report covering every registered object.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct M1Report {
    pub entries: BTreeMap<ObjectId, M1Entry>,
}

/// Pose estimate for an object involved in the current action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Entry {
    pub pose: Pose,
    /// Magnitude of the estimation error carried by this reading.
    pub deviation: f64,
}

/// Pose-estimation report, restricted to the current action's objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct M2Report {
    pub entries: BTreeMap<ObjectId, M2Entry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("tracking report is missing object `{0}`")]
    MissingObject(ObjectId),
    #[error("report mentions unknown object `{0}`")]
    UnknownObject(ObjectId),
    #[error("pose report covers `{0}`, which is not part of the current action")]
    OutOfScope(ObjectId),
    #[error("tracking entry for `{0}` has a position but is flagged lost")]
    Inconsistent(ObjectId),
}

/// Ingestion check for a pair of reports against the believed state.
pub fn validate_reports(
    state: &WorldState,
    current: Option<&ActionInstance>,
    m1: &M1Report,
    m2: &M2Report,
) -> Result<(), ReportError> {
    for o in state.objects() {
        if !m1.entries.contains_key(o) {
            return Err(ReportError::MissingObject(o.clone()));
        }
    }
    for (o, e) in &m1.entries {
        if !state.objects().contains(o) {
            return Err(ReportError::UnknownObject(o.clone()));
        }
        if e.lost && e.position.is_some() {
            return Err(ReportError::Inconsistent(o.clone()));
        }
    }
    for o in m2.entries.keys() {
        if !current.is_some_and(|a| a.involves(o)) {
            return Err(ReportError::OutOfScope(o.clone()));
        }
    }
    Ok(())
}

impl M1Report {
    pub fn position(&self, o: &ObjectId) -> Option<Position> {
        self.entries.get(o).and_then(|e| e.position)
    }
}
