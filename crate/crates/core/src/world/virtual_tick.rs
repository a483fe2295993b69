//! Offline execution of a subtree to completion.

use std::collections::BTreeSet;

use crate::atom::ActionInstance;
use crate::bt::{self, ActionPoll, ActionRuntime, BehaviorTree, BtError, Status};

use super::{WorldError, WorldState};

/// Runtime in which every started action completes before the next tick.
/// Preconditions are checked against the belief at start.
#[derive(Debug, Default)]
pub struct InstantRuntime {
    done: BTreeSet<ActionInstance>,
}

impl ActionRuntime for InstantRuntime {
    fn poll(&mut self, action: &ActionInstance) -> ActionPoll {
        if self.done.contains(action) {
            ActionPoll::Succeeded(Vec::new())
        } else {
            ActionPoll::Idle
        }
    }

    fn start(&mut self, action: &ActionInstance, belief: &WorldState) -> Result<(), String> {
        let fx = belief.effects_of(action).map_err(|e| e.to_string())?;
        for atom in &fx.pre {
            if !belief.holds(atom).map_err(|e| e.to_string())? {
                return Err(format!("precondition {atom} does not hold"));
            }
        }
        self.done.insert(action.clone());
        Ok(())
    }

    fn suspend(&mut self, _: &ActionInstance) {}

    fn acknowledge(&mut self, action: &ActionInstance) {
        self.done.remove(action);
    }
}

/// Ticks `tree` from `state` until it stops returning `Running`.
///
/// Returns the resulting state, or `VirtualFailure` naming the node that
/// decided the failure.
pub fn virtual_tick(tree: &BehaviorTree, state: &WorldState) -> Result<WorldState, WorldError> {
    let mut belief = state.clone();
    let mut rt = InstantRuntime::default();
    // Each action needs two ticks; anything beyond that is a livelock.
    let cap = 2 * tree.root.walk().count() + 2;
    for _ in 0..cap {
        let out = bt::tick(tree, &mut belief, &mut rt).map_err(world_error)?;
        match out.status {
            Status::Success => return Ok(belief),
            Status::Running => continue,
            Status::Failure => {
                let node = bt::failed_node(tree, &out.trace).map_err(world_error)?;
                return Err(WorldError::VirtualFailure { node });
            }
        }
    }
    Err(WorldError::VirtualFailure {
        node: tree.root.id.clone(),
    })
}

fn world_error(e: BtError) -> WorldError {
    match e {
        BtError::World(w) | BtError::UnknownAtom { source: w, .. } => w,
        other => WorldError::InvalidDomain(other.to_string()),
    }
}
