//! Behavior-tree data model, documents and reactive tick semantics.

mod doc;
mod node;
mod tick;
mod unit;

pub use doc::{from_document, to_document, validate_document, Violation};
pub use node::{BehaviorTree, BtNode, NodeId, NodeKind, Provenance, TreeMeta, Walk};
pub use tick::{
    failed_node, tick, tick_with, ActionEvent, ActionPoll, ActionRuntime, Recovery, Status,
    TickOptions, TickOutcome, TickTrace, Visit,
};
pub use unit::{as_unit, find_unit, make_action_unit, units, UnitView};

use thiserror::Error;

use crate::atom::{ActionInstance, Atom};
use crate::world::WorldError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BtError {
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("condition `{node}` references an unknown atom: {source}")]
    UnknownAtom {
        node: NodeId,
        #[source]
        source: WorldError,
    },
    #[error("the last tick did not fail")]
    NoFailure,
    #[error("{target} is not an effect of {action}")]
    SchemaMismatch {
        action: ActionInstance,
        target: Atom,
    },
    #[error("{path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error(transparent)]
    World(#[from] WorldError),
}
