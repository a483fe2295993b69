use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::atom::{ActionInstance, Atom, ObjectId};
use crate::world::Pose;

/// A part attached to the object it was assembled onto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub part: ObjectId,
    pub relation: String,
    pub base: ObjectId,
}

/// Workcell fixture document.
///
/// ```json
/// {"poses": {"gripper": [0, 0, 0], "gear1": [0.2, 0.1, 0]},
///  "tools": ["gripper"], "mounted": "gripper",
///  "attachments": [], "tolerance": 0.01}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkcellDoc {
    /// Initial pose `[x, y, yaw]` of every object.
    pub poses: BTreeMap<ObjectId, [f64; 3]>,
    pub tools: Vec<ObjectId>,
    #[serde(default)]
    pub mounted: Option<ObjectId>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    /// Per-action duration overrides in ticks.
    #[serde(default)]
    pub durations: BTreeMap<String, u32>,
    /// Largest distance between commanded and actual pose at which an
    /// action still succeeds.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.01
}

impl WorkcellDoc {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveAction {
    pub action: ActionInstance,
    pub progress: u32,
    pub duration: u32,
    /// Poses the robot was commanded to, taken from the belief at (re)start.
    pub commanded: Vec<(ObjectId, Pose)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finished {
    pub action: ActionInstance,
    pub outcome: Result<Vec<(ObjectId, Pose)>, String>,
}

/// Ground truth of the workcell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkcellState {
    pub poses: BTreeMap<ObjectId, Pose>,
    /// Keyed by part; each part rests on at most one base.
    pub attachments: BTreeMap<ObjectId, Attachment>,
    pub mounted: Option<ObjectId>,
    pub held: Option<ObjectId>,
    pub active: Option<ActiveAction>,
    pub suspended: BTreeMap<ActionInstance, u32>,
    /// Completed actions not yet acknowledged by the runtime's client.
    pub finished: Vec<Finished>,
}

impl WorkcellState {
    /// Objects transitively resting on `o`, excluding `o`.
    pub fn dependents(&self, o: &ObjectId) -> BTreeSet<ObjectId> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![o.clone()];
        while let Some(b) = frontier.pop() {
            for a in self.attachments.values().filter(|a| a.base == b) {
                if out.insert(a.part.clone()) {
                    frontier.push(a.part.clone());
                }
            }
        }
        out
    }

    /// Whether attaching `part` onto `base` would close a cycle.
    pub fn would_cycle(&self, part: &ObjectId, base: &ObjectId) -> bool {
        part == base || self.dependents(part).contains(base)
    }

    /// Relations induced by attachments and the held object.
    pub fn relations(&self) -> BTreeSet<Atom> {
        let mut out: BTreeSet<Atom> = self
            .attachments
            .values()
            .map(|a| Atom::binary(a.relation.clone(), a.part.clone(), a.base.clone()))
            .collect();
        if let (Some(tool), Some(part)) = (&self.mounted, &self.held) {
            out.insert(Atom::binary("hold", tool.clone(), part.clone()));
        }
        out
    }

    pub(crate) fn displace(&mut self, o: &ObjectId, dx: f64, dy: f64) -> Vec<ObjectId> {
        if self.held.as_ref() == Some(o) {
            self.held = None;
        }
        let mut moved = vec![o.clone()];
        moved.extend(self.dependents(o));
        self.attachments.remove(o);
        for m in &moved {
            if let Some(p) = self.poses.get_mut(m) {
                p.x += dx;
                p.y += dy;
            }
        }
        moved
    }
}
