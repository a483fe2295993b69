//! Two-stage plan generation: interpreting a demonstration into subtasks and
//! constraints, then sequencing actions and synthesizing one subtree per
//! subtask, chained through virtual ticks.

mod backend;
mod eval;
mod fallback;
mod gate;
mod pipeline;
mod select;
mod types;
mod validate;

pub use backend::{
    BackendError, Fault, FaultKind, FaultPlan, FaultStage, FaultyBackend, MockBackend, MockScript,
    PlannerBackend, Prompt, RuleBackend,
};
pub use eval::{
    evaluate_generation, score_decomposition, CorpusEntry, GenerationRow, GenerationTable, Scores,
    VideoScores,
};
pub use fallback::{fallback_sequence, fallback_subtree, verify_sequence};
pub use gate::{AutoApprove, InteractiveGate, ReviewGate, ScriptedGate};
pub use pipeline::{
    generate_plan, interpret_demo, plan_action_sequence, synthesize_subtree, PlanBundle,
    PlanConfig, ReviewLog,
};
pub use select::{BackendSpec, CommandBackend};
pub use types::{
    DemonstrationTranscript, Gold, Interpretation, Keyframe, Narration, ReviewItem, ReviewPayload,
    ReviewRecord, ReviewSource, ReviewStage, Subtask, Verdict,
};
pub use validate::{
    check_interpretation, tree_goal, validate_logical, validate_syntactic, LogicReport,
    SyntaxReport,
};

use thiserror::Error;

use crate::atom::ObjectId;
use crate::bt::{BtError, NodeId, Violation};
use crate::world::WorldError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("unparseable reply: {0}")]
    ParseFailure(String),
    #[error("ungrounded symbol: {0}")]
    UngroundedSymbol(String),
    #[error("{stage}: no accepted reply after {rounds} round(s); last problem: {last}")]
    MaxRoundsExceeded {
        stage: ReviewStage,
        rounds: u32,
        last: String,
    },
    #[error("incoherent sequence at step {step}: {reason}")]
    IncoherentSequence { step: usize, reason: String },
    #[error("no tool can manipulate `{0}`")]
    NoTool(ObjectId),
    #[error("schema violation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    SchemaViolation(Vec<Violation>),
    #[error("virtual execution failed at node `{node}`")]
    VirtualFailure { node: NodeId },
    #[error("subtree does not establish {0}")]
    GoalNotEstablished(String),
    #[error("review aborted: {0}")]
    ReviewAborted(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Bt(#[from] BtError),
    #[error("stage {stage}: {source}")]
    AtStage {
        stage: usize,
        #[source]
        source: Box<PlanError>,
    },
}

impl PlanError {
    pub(crate) fn at_stage(self, stage: usize) -> Self {
        match self {
            e @ PlanError::AtStage { .. } => e,
            e => PlanError::AtStage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The error with any stage annotation stripped.
    pub fn root(&self) -> &PlanError {
        match self {
            PlanError::AtStage { source, .. } => source.root(),
            other => other,
        }
    }
}
