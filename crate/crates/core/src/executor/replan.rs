use crate::bt::{to_document, BehaviorTree, Provenance};
use crate::planner::{
    fallback_sequence, fallback_subtree, plan_action_sequence, synthesize_subtree, AutoApprove,
    PlanConfig, PlanError, PlannerBackend, ReviewGate, ReviewItem, ReviewLog, ReviewPayload,
    ReviewStage, Subtask, Verdict,
};
use crate::world::WorldState;

/// Produces a fresh subtree for a stage from the current belief.
pub trait Replanner: Send {
    fn replan(
        &mut self,
        stage: usize,
        subtask: &Subtask,
        belief: &WorldState,
    ) -> Result<BehaviorTree, PlanError>;
}

/// The deterministic rule-based planner.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackReplanner;

impl Replanner for FallbackReplanner {
    fn replan(
        &mut self,
        stage: usize,
        subtask: &Subtask,
        belief: &WorldState,
    ) -> Result<BehaviorTree, PlanError> {
        let actions = fallback_sequence(subtask, belief)?;
        let mut tree = fallback_subtree(stage, subtask, &actions, belief)?;
        tree.meta.provenance = Provenance::Replanned;
        Ok(tree)
    }
}

/// Replans through a planner backend, validating replies like plan
/// generation does.
pub struct BackendReplanner {
    backend: Box<dyn PlannerBackend>,
    cfg: PlanConfig,
    log: ReviewLog,
}

impl BackendReplanner {
    pub fn new(backend: Box<dyn PlannerBackend>, cfg: PlanConfig) -> Self {
        Self {
            backend,
            cfg,
            log: ReviewLog::new(),
        }
    }

    pub fn log(&self) -> &ReviewLog {
        &self.log
    }
}

impl Replanner for BackendReplanner {
    fn replan(
        &mut self,
        stage: usize,
        subtask: &Subtask,
        belief: &WorldState,
    ) -> Result<BehaviorTree, PlanError> {
        let actions = plan_action_sequence(
            stage,
            subtask,
            belief,
            self.backend.as_mut(),
            &self.cfg,
            &mut self.log,
        )?;
        let (mut tree, _) = synthesize_subtree(
            stage,
            subtask,
            &actions,
            belief,
            self.backend.as_mut(),
            &mut AutoApprove,
            &self.cfg,
            &mut self.log,
        )?;
        tree.meta.provenance = Provenance::Replanned;
        Ok(tree)
    }
}

/// Asks a review gate to approve every replanned subtree. Feedback rejects
/// the replan.
pub struct GatedReplanner<R> {
    inner: R,
    gate: Box<dyn ReviewGate>,
}

impl<R: Replanner> GatedReplanner<R> {
    pub fn new(inner: R, gate: Box<dyn ReviewGate>) -> Self {
        Self { inner, gate }
    }
}

impl<R: Replanner> Replanner for GatedReplanner<R> {
    fn replan(
        &mut self,
        stage: usize,
        subtask: &Subtask,
        belief: &WorldState,
    ) -> Result<BehaviorTree, PlanError> {
        let tree = self.inner.replan(stage, subtask, belief)?;
        let item = ReviewItem {
            stage: ReviewStage::Subtree(stage),
            round: 0,
            payload: ReviewPayload::Tree {
                subtask: subtask.clone(),
                document: to_document(&tree),
            },
            diagnostics: vec!["replanned during execution".into()],
        };
        match self.gate.review(&item)? {
            Verdict::Approve => Ok(tree),
            Verdict::Feedback(text) => {
                Err(PlanError::ReviewAborted(format!("replan rejected: {text}")))
            }
        }
    }
}
