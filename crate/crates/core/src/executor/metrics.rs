use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::atom::Atom;

use super::trace::{EventKind, ExecutionTrace, UpdateSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Task success: every stage completed and every goal holds at the end.
    pub ts: bool,
    /// Completion rate: completed stages over stages.
    pub cr: f64,
    /// Disturbance recovery rate over accepted disturbances; 1 when there
    /// were none, with `drr_applicable` false.
    pub drr: f64,
    pub drr_applicable: bool,
    pub disturbances: usize,
    pub recovered: usize,
    pub ticks: u64,
    pub replans: u32,
    /// The bound that stopped the run, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<String>,
}

/// Derives the run metrics from a trace of a plan with `stages` stages.
///
/// A disturbance counts as recovered when every atom the maintenance pass
/// right after it removed about the moved objects is added back later, and
/// any stage rolled back to before the next disturbance completes again.
pub fn compute_metrics(trace: &ExecutionTrace, stages: usize) -> RunMetrics {
    let events = &trace.events;
    let mut completed = 0usize;
    let mut replans = 0u32;
    let mut goals_hold = false;
    let mut bound = None;
    for e in events {
        match &e.kind {
            EventKind::StageComplete { stage, .. } => completed = stage + 1,
            EventKind::Rollback { to, .. } => completed = *to,
            EventKind::Replan { .. } => replans += 1,
            EventKind::RunFinished {
                goals_hold: g,
                bound: b,
                ..
            } => {
                goals_hold = *g;
                bound = b.clone();
            }
            _ => {}
        }
    }
    let accepted: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.kind, EventKind::Disturbance { accepted: true, .. }))
        .map(|(k, _)| k)
        .collect();
    let mut recovered = 0;
    for (n, &k) in accepted.iter().enumerate() {
        let EventKind::Disturbance { moved, .. } = &events[k].kind else {
            unreachable!()
        };
        let t0 = events[k].t;
        let mut violated: BTreeSet<&Atom> = BTreeSet::new();
        for e in events[k + 1..]
            .iter()
            .take_while(|e| e.t == t0 && !matches!(e.kind, EventKind::Tick { .. }))
        {
            if let EventKind::StateUpdate {
                source: UpdateSource::Perception,
                removed,
                ..
            } = &e.kind
            {
                violated.extend(
                    removed
                        .iter()
                        .filter(|a| moved.iter().any(|o| a.mentions(o))),
                );
            }
        }
        let next = accepted.get(n + 1).copied().unwrap_or(events.len());
        let mut pending_stage: Option<usize> = None;
        for (idx, e) in events.iter().enumerate().skip(k + 1) {
            match &e.kind {
                EventKind::StateUpdate { added, .. } => {
                    for a in added {
                        violated.remove(a);
                    }
                }
                EventKind::Rollback { to, .. } if idx < next && pending_stage.is_none() => {
                    pending_stage = Some(*to)
                }
                EventKind::StageComplete { stage, .. } if pending_stage == Some(*stage) => {
                    pending_stage = None
                }
                _ => {}
            }
        }
        if violated.is_empty() && pending_stage.is_none() {
            recovered += 1;
        }
    }
    let ticks = events.last().map_or(0, |e| e.t);
    let ts = completed == stages && goals_hold;
    RunMetrics {
        ts,
        cr: if stages == 0 {
            1.0
        } else {
            completed as f64 / stages as f64
        },
        drr: if accepted.is_empty() {
            1.0
        } else {
            recovered as f64 / accepted.len() as f64
        },
        drr_applicable: !accepted.is_empty(),
        disturbances: accepted.len(),
        recovered,
        ticks,
        replans,
        bound,
    }
}
