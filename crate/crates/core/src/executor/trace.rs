use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atom::{ActionInstance, Atom, ObjectId};
use crate::bt::{NodeId, Status, Visit};
use crate::sim::{DisturbanceKind, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSource {
    /// Effects of a completed action.
    Action,
    /// Perception-driven maintenance.
    Perception,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Tick {
        stage: usize,
        status: Status,
        visited: Vec<Visit>,
    },
    ActionStart {
        action: ActionInstance,
        node: NodeId,
        resumed: bool,
    },
    ActionSuspend {
        action: ActionInstance,
    },
    ActionComplete {
        action: ActionInstance,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<NodeId>,
        success: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    SelfRecovery {
        atom: Atom,
        action: ActionInstance,
        unit: NodeId,
    },
    StateUpdate {
        source: UpdateSource,
        added: Vec<Atom>,
        removed: Vec<Atom>,
    },
    ReportRejected {
        reason: String,
    },
    Disturbance {
        kind: DisturbanceKind,
        payload: Payload,
        accepted: bool,
        #[serde(default)]
        moved: Vec<ObjectId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Rollback {
        from: usize,
        to: usize,
    },
    Replan {
        stage: usize,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tree: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    StageComplete {
        stage: usize,
        relation: Atom,
    },
    RunFinished {
        stages: usize,
        stages_completed: usize,
        /// Every goal relation holds in belief and in ground truth.
        goals_hold: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<String>,
    },
}

/// One trace entry, timestamped in ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<Event>,
}

impl ExecutionTrace {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Human-readable log with a stage timeline. Ticks are collapsed to
    /// their stage transitions and failures.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut stage = None;
        for e in &self.events {
            let t = e.t;
            let line = match &e.kind {
                EventKind::Tick {
                    stage: s, status, ..
                } => {
                    let changed = stage != Some(*s);
                    stage = Some(*s);
                    if changed {
                        format!("stage {s} ticking")
                    } else if *status == Status::Failure {
                        format!("stage {s} tick failed")
                    } else {
                        continue;
                    }
                }
                EventKind::ActionStart {
                    action, resumed, ..
                } => {
                    format!("{} {action}", if *resumed { "resume" } else { "start" })
                }
                EventKind::ActionSuspend { action } => format!("suspend {action}"),
                EventKind::ActionComplete {
                    action,
                    success,
                    reason,
                    ..
                } => match (success, reason) {
                    (true, _) => format!("done {action}"),
                    (false, Some(r)) => format!("failed {action}: {r}"),
                    (false, None) => format!("failed {action}"),
                },
                EventKind::SelfRecovery { atom, action, .. } => {
                    format!("self-recovery: {action} restores {atom}")
                }
                EventKind::StateUpdate {
                    source,
                    added,
                    removed,
                } => {
                    let list = |v: &[Atom]| {
                        v.iter()
                            .map(|a| a.to_string())
                            .collect::<Vec<_>>()
                            .join(", ")
                    };
                    let src = match source {
                        UpdateSource::Action => "effects",
                        UpdateSource::Perception => "perception",
                    };
                    match (added.is_empty(), removed.is_empty()) {
                        (false, false) => format!("{src}: +[{}] -[{}]", list(added), list(removed)),
                        (false, true) => format!("{src}: +[{}]", list(added)),
                        (true, false) => format!("{src}: -[{}]", list(removed)),
                        (true, true) => continue,
                    }
                }
                EventKind::ReportRejected { reason } => {
                    format!("perception report rejected: {reason}")
                }
                EventKind::Disturbance {
                    kind,
                    payload,
                    accepted,
                    error,
                    ..
                } => {
                    let [dx, dy] = payload.displacement;
                    let what = match &payload.detach_from {
                        Some(b) => {
                            format!("detach {} from {b} by ({dx:+.3}, {dy:+.3})", payload.object)
                        }
                        None => format!("move {} by ({dx:+.3}, {dy:+.3})", payload.object),
                    };
                    if *accepted {
                        format!("disturbance {kind}: {what}")
                    } else {
                        format!(
                            "disturbance {kind} rejected: {}",
                            error.as_deref().unwrap_or("")
                        )
                    }
                }
                EventKind::Rollback { from, to } => {
                    stage = Some(*to);
                    format!("ROLLBACK stage {from} -> stage {to}")
                }
                EventKind::Replan {
                    stage: s,
                    ok,
                    error,
                    ..
                } => match (ok, error) {
                    (true, _) => format!("replanned stage {s}"),
                    (false, e) => format!(
                        "replanning stage {s} failed: {}",
                        e.as_deref().unwrap_or("")
                    ),
                },
                EventKind::StageComplete { stage: s, relation } => {
                    format!("stage {s} complete: {relation}")
                }
                EventKind::RunFinished {
                    stages,
                    stages_completed,
                    goals_hold,
                    bound,
                } => {
                    let verdict = if *goals_hold && stages_completed == stages {
                        "success".to_owned()
                    } else {
                        format!("stopped ({})", bound.as_deref().unwrap_or("goals violated"))
                    };
                    format!("finished: {stages_completed}/{stages} stages, {verdict}")
                }
            };
            let _ = writeln!(out, "[{t:>5}] {line}");
        }
        out
    }
}
