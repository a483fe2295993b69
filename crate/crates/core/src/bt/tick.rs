//! Reactive tick semantics.
//!
//! Every tick starts at the root and keeps no per-node memory: a Sequence
//! re-checks earlier children on each pass, so a violated precondition
//! interrupts whatever action was running behind it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atom::{ActionInstance, Atom, ObjectId};
use crate::world::{AtomDelta, Pose, WorldState};

use super::node::{BehaviorTree, BtNode, NodeId, NodeKind};
use super::unit;
use super::BtError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Success,
    Failure,
    Running,
}

/// What the runtime knows about one action instance.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionPoll {
    Idle,
    Running,
    Suspended,
    /// Completed; carries poses observed while executing.
    Succeeded(Vec<(ObjectId, Pose)>),
    Failed(String),
}

/// Executes actions asynchronously on behalf of Action nodes.
pub trait ActionRuntime {
    fn poll(&mut self, action: &ActionInstance) -> ActionPoll;
    /// Starts `action`, or resumes it with retained progress if suspended.
    fn start(&mut self, action: &ActionInstance, belief: &WorldState) -> Result<(), String>;
    fn suspend(&mut self, action: &ActionInstance);
    /// Consumes a terminal result so the instance can run again later.
    fn acknowledge(&mut self, action: &ActionInstance);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub node: NodeId,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ActionEvent {
    Started {
        node: NodeId,
        action: ActionInstance,
        resumed: bool,
    },
    Completed {
        node: NodeId,
        action: ActionInstance,
        success: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

/// In-tick rerouting to an action unit that restores a failed precondition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recovery {
    pub atom: Atom,
    pub unit: NodeId,
    pub status: Status,
}

/// Everything that happened during one tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickTrace {
    /// Visited nodes in the order they were entered.
    pub visited: Vec<Visit>,
    pub actions: Vec<ActionEvent>,
    pub recoveries: Vec<Recovery>,
    /// Belief changes from completed actions.
    pub effects: AtomDelta,
}

impl TickTrace {
    pub fn status_of(&self, id: &NodeId) -> Option<Status> {
        self.visited
            .iter()
            .find(|v| &v.node == id)
            .map(|v| v.status)
    }

    pub fn visited_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.visited.iter().map(|v| &v.node)
    }

    /// Action nodes left in `Running` by this tick.
    pub fn running_actions<'t>(&self, tree: &'t BtNode) -> Vec<&'t ActionInstance> {
        self.visited
            .iter()
            .filter(|v| v.status == Status::Running)
            .filter_map(|v| tree.find(&v.node).and_then(BtNode::as_action))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub status: Status,
    pub trace: TickTrace,
}

/// Options for [`tick_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TickOptions<'a> {
    /// Subtree searched for action units when a precondition fails.
    pub recovery_scope: Option<&'a BtNode>,
}

/// Ticks `tree` once against `belief`.
pub fn tick(
    tree: &BehaviorTree,
    belief: &mut WorldState,
    runtime: &mut dyn ActionRuntime,
) -> Result<TickOutcome, BtError> {
    tick_with(tree, belief, runtime, TickOptions::default())
}

pub fn tick_with(
    tree: &BehaviorTree,
    belief: &mut WorldState,
    runtime: &mut dyn ActionRuntime,
    opts: TickOptions<'_>,
) -> Result<TickOutcome, BtError> {
    tree.check()?;
    let mut t = Ticker {
        runtime,
        scope: opts.recovery_scope,
        path: Vec::new(),
        recovering: Vec::new(),
        trace: TickTrace::default(),
    };
    let status = t.node(&tree.root, belief, false)?;
    Ok(TickOutcome {
        status,
        trace: t.trace,
    })
}

struct Ticker<'r, 's> {
    runtime: &'r mut dyn ActionRuntime,
    scope: Option<&'s BtNode>,
    path: Vec<NodeId>,
    recovering: Vec<Atom>,
    trace: TickTrace,
}

impl Ticker<'_, '_> {
    fn node(
        &mut self,
        n: &BtNode,
        belief: &mut WorldState,
        guarded: bool,
    ) -> Result<Status, BtError> {
        let slot = self.trace.visited.len();
        self.trace.visited.push(Visit {
            node: n.id.clone(),
            status: Status::Running,
        });
        self.path.push(n.id.clone());
        let status = match &n.kind {
            NodeKind::Sequence(children) => {
                let mut out = Status::Success;
                for c in children {
                    match self.node(c, belief, true)? {
                        Status::Success => {}
                        other => {
                            out = other;
                            break;
                        }
                    }
                }
                out
            }
            NodeKind::Selector(children) => {
                let mut out = Status::Failure;
                for c in children {
                    match self.node(c, belief, false)? {
                        Status::Failure => {}
                        other => {
                            out = other;
                            break;
                        }
                    }
                }
                out
            }
            NodeKind::Condition(atom) => self.condition(n, atom, belief, guarded)?,
            NodeKind::Action(action) => self.action(n, action, belief)?,
        };
        self.path.pop();
        self.trace.visited[slot].status = status;
        Ok(status)
    }

    fn eval(&self, n: &BtNode, atom: &Atom, belief: &WorldState) -> Result<bool, BtError> {
        belief.holds(atom).map_err(|source| BtError::UnknownAtom {
            node: n.id.clone(),
            source,
        })
    }

    fn condition(
        &mut self,
        n: &BtNode,
        atom: &Atom,
        belief: &mut WorldState,
        guarded: bool,
    ) -> Result<Status, BtError> {
        if self.eval(n, atom, belief)? {
            return Ok(Status::Success);
        }
        // A failing guard may be restored by an action unit elsewhere in the
        // recovery scope.
        let Some(scope) = self.scope.filter(|_| guarded) else {
            return Ok(Status::Failure);
        };
        if self.recovering.contains(atom) {
            return Ok(Status::Failure);
        }
        let Some(found) = unit::find_unit(scope, atom).filter(|u| !self.path.contains(&u.id))
        else {
            return Ok(Status::Failure);
        };
        self.recovering.push(atom.clone());
        let status = self.node(found, belief, false)?;
        self.recovering.pop();
        self.trace.recoveries.push(Recovery {
            atom: atom.clone(),
            unit: found.id.clone(),
            status,
        });
        Ok(match status {
            Status::Success if self.eval(n, atom, belief)? => Status::Success,
            Status::Success | Status::Failure => Status::Failure,
            Status::Running => Status::Running,
        })
    }

    fn action(
        &mut self,
        n: &BtNode,
        action: &ActionInstance,
        belief: &mut WorldState,
    ) -> Result<Status, BtError> {
        let resumed = match self.runtime.poll(action) {
            ActionPoll::Running => return Ok(Status::Running),
            ActionPoll::Succeeded(observed) => {
                let delta = belief.apply_outcome(action, &observed)?;
                self.trace.effects.merge(delta);
                self.runtime.acknowledge(action);
                self.trace.actions.push(ActionEvent::Completed {
                    node: n.id.clone(),
                    action: action.clone(),
                    success: true,
                    reason: None,
                });
                return Ok(Status::Success);
            }
            ActionPoll::Failed(reason) => {
                self.runtime.acknowledge(action);
                self.trace.actions.push(ActionEvent::Completed {
                    node: n.id.clone(),
                    action: action.clone(),
                    success: false,
                    reason: Some(reason),
                });
                return Ok(Status::Failure);
            }
            ActionPoll::Idle => false,
            ActionPoll::Suspended => true,
        };
        match self.runtime.start(action, belief) {
            Ok(()) => {
                self.trace.actions.push(ActionEvent::Started {
                    node: n.id.clone(),
                    action: action.clone(),
                    resumed,
                });
                Ok(Status::Running)
            }
            Err(reason) => {
                self.trace.actions.push(ActionEvent::Completed {
                    node: n.id.clone(),
                    action: action.clone(),
                    success: false,
                    reason: Some(reason),
                });
                Ok(Status::Failure)
            }
        }
    }
}

/// The leaf whose Failure decided the root's Failure on the traced tick.
///
/// A failed Sequence is explained by its first failing child. A failed
/// Selector is explained by its last child: in an action unit that is the
/// guarded branch, since the target condition failing is expected.
pub fn failed_node(tree: &BehaviorTree, last: &TickTrace) -> Result<NodeId, BtError> {
    let status: BTreeMap<&NodeId, Status> =
        last.visited.iter().map(|v| (&v.node, v.status)).collect();
    if status.get(&tree.root.id) != Some(&Status::Failure) {
        return Err(BtError::NoFailure);
    }
    let mut n = &tree.root;
    loop {
        let next = match &n.kind {
            NodeKind::Sequence(children) => children
                .iter()
                .find(|c| status.get(&c.id) == Some(&Status::Failure)),
            NodeKind::Selector(children) => children
                .iter()
                .rev()
                .find(|c| status.get(&c.id) == Some(&Status::Failure)),
            NodeKind::Condition(_) | NodeKind::Action(_) => return Ok(n.id.clone()),
        };
        match next {
            Some(c) => n = c,
            None => return Err(BtError::NoFailure),
        }
    }
}
