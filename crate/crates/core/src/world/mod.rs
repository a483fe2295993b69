//! Symbolic world model: domain vocabulary, believed world state, setup
//! loading, perception-driven state maintenance and virtual ticking.

mod domain;
mod perception;
mod setup;
mod state;
mod update;
mod virtual_tick;

pub use domain::{ActionSchema, AtomTemplate, Domain, Role, SkillBinding, SymbolClass};
pub use perception::{validate_reports, M1Entry, M1Report, M2Entry, M2Report, ReportError};
pub use setup::{init_state, SetupDoc};
pub use state::{diff, AtomDelta, ConstraintSet, GroundEffects, Pose, Position, WorldState};
pub use update::{update_state, UpdateConfig};
pub use virtual_tick::{virtual_tick, InstantRuntime};

use thiserror::Error;

use crate::atom::{ActionInstance, Atom, ObjectId};
use crate::bt::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unknown object `{0}`")]
    UnknownObject(ObjectId),
    #[error("duplicate atom {0}")]
    DuplicateAtom(Atom),
    #[error("duplicate object `{0}`")]
    DuplicateObject(ObjectId),
    #[error("`{symbol}` expects {expected} argument(s), got {found}")]
    ArityMismatch {
        symbol: String,
        expected: usize,
        found: usize,
    },
    #[error("precondition {atom} of {action} does not hold")]
    PreconditionUnsatisfied { action: ActionInstance, atom: Atom },
    #[error("world states belong to different domains")]
    DomainMismatch,
    #[error("virtual execution failed at node `{node}`")]
    VirtualFailure { node: NodeId },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("{path}: {source}")]
    At {
        path: String,
        #[source]
        source: Box<WorldError>,
    },
}

impl WorldError {
    pub(crate) fn at(self, path: impl Into<String>) -> Self {
        WorldError::At {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The error with any path annotation stripped.
    pub fn root(&self) -> &WorldError {
        match self {
            WorldError::At { source, .. } => source.root(),
            other => other,
        }
    }
}
