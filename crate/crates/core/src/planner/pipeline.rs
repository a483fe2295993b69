//! The two-stage generation pipeline.

use std::sync::Arc;

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::atom::{ActionInstance, Atom};
use crate::bt::{to_document, BehaviorTree};
use crate::world::{init_state, virtual_tick, Domain, SetupDoc, WorldState};

use super::backend::{fallback_reply, BackendError, PlannerBackend, Prompt};
use super::validate::{accept_subtree, check_interpretation, parse_interpretation, parse_sequence};
use super::{
    verify_sequence, DemonstrationTranscript, Interpretation, PlanError, ReviewGate, ReviewItem,
    ReviewPayload, ReviewRecord, ReviewSource, ReviewStage, Subtask, Verdict,
};

pub type ReviewLog = Vec<ReviewRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanConfig {
    /// Refine rounds allowed per artifact after the first reply.
    pub max_rounds: u32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { max_rounds: 5 }
    }
}

/// Output of [`generate_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanBundle {
    pub subtasks: Vec<Subtask>,
    pub constraints: Vec<Atom>,
    pub subtrees: Vec<BehaviorTree>,
    pub goals: Vec<Atom>,
    /// `snapshots[i]` is the state stage `i` starts from; one more than stages.
    pub snapshots: Vec<WorldState>,
    pub review_log: ReviewLog,
}

impl PlanBundle {
    pub fn len(&self) -> usize {
        self.subtrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtrees.is_empty()
    }

    pub fn initial_state(&self) -> &WorldState {
        &self.snapshots[0]
    }

    /// Verifies the bundle's counts and that every subtree virtually carries
    /// its snapshot to the next one while establishing its goal.
    pub fn check_chain(&self) -> Result<(), PlanError> {
        let n = self.subtrees.len();
        if self.subtasks.len() != n || self.goals.len() != n || self.snapshots.len() != n + 1 {
            return Err(PlanError::ParseFailure(
                "plan bundle component counts disagree".into(),
            ));
        }
        for (i, tree) in self.subtrees.iter().enumerate() {
            let next = virtual_tick(tree, &self.snapshots[i])
                .map_err(|e| PlanError::from(e).at_stage(i))?;
            if next != self.snapshots[i + 1] {
                return Err(
                    PlanError::GoalNotEstablished(format!("stage {i}: snapshot mismatch"))
                        .at_stage(i),
                );
            }
            if !next.holds(&self.goals[i])? {
                return Err(PlanError::GoalNotEstablished(self.goals[i].to_string()).at_stage(i));
            }
        }
        Ok(())
    }
}

impl Serialize for PlanBundle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let trees: Vec<_> = self.subtrees.iter().map(to_document).collect();
        let mut st = s.serialize_struct("PlanBundle", 6)?;
        st.serialize_field("subtasks", &self.subtasks)?;
        st.serialize_field("constraints", &self.constraints)?;
        st.serialize_field("subtrees", &trees)?;
        st.serialize_field("goals", &self.goals)?;
        st.serialize_field("snapshots", &self.snapshots)?;
        st.serialize_field("review_log", &self.review_log)?;
        st.end()
    }
}

struct Round<'a> {
    backend: &'a mut dyn PlannerBackend,
    gate: Option<&'a mut dyn ReviewGate>,
    prompt: &'a Prompt,
    stage: ReviewStage,
    cfg: &'a PlanConfig,
    log: &'a mut ReviewLog,
}

impl Round<'_> {
    /// Requests, validates and reviews replies until one is accepted.
    /// Validation failures and reviewer feedback both trigger a refine round.
    /// A declined request is answered by the rule-based planner, whose
    /// validation failures are final.
    fn negotiate<T>(
        self,
        mut accept: impl FnMut(&str) -> Result<T, PlanError>,
        present: impl Fn(&T) -> ReviewPayload,
    ) -> Result<T, PlanError> {
        let Round {
            backend,
            mut gate,
            prompt,
            stage,
            cfg,
            log,
        } = self;
        let mut prior: Option<String> = None;
        let mut feedback = String::new();
        let mut last = String::new();
        for round in 0..=cfg.max_rounds {
            let asked = match &prior {
                None => backend.interpret(prompt),
                Some(p) => backend.refine(prompt, p, &feedback),
            };
            let (reply, fallback) = match asked {
                Ok(r) => (r, false),
                Err(BackendError::Declined) => match fallback_reply(prompt) {
                    Some(r) => (r, true),
                    None => return Err(PlanError::Backend(BackendError::Declined.to_string())),
                },
                Err(e) => return Err(PlanError::Backend(e.to_string())),
            };
            match accept(&reply) {
                Err(e) if fallback || cfg.max_rounds == 0 => return Err(e),
                Err(e) => {
                    feedback = e.to_string();
                    last = feedback.clone();
                    log.push(ReviewRecord {
                        stage,
                        round,
                        source: ReviewSource::Validator,
                        verdict: Verdict::Feedback(feedback.clone()),
                    });
                }
                Ok(v) => {
                    let Some(g) = gate.as_deref_mut() else {
                        return Ok(v);
                    };
                    let item = ReviewItem {
                        stage,
                        round,
                        payload: present(&v),
                        diagnostics: Vec::new(),
                    };
                    let verdict = g.review(&item)?;
                    log.push(ReviewRecord {
                        stage,
                        round,
                        source: ReviewSource::Gate,
                        verdict: verdict.clone(),
                    });
                    match verdict {
                        Verdict::Approve => return Ok(v),
                        Verdict::Feedback(text) => {
                            last = format!("reviewer feedback: {text}");
                            feedback = text;
                        }
                    }
                }
            }
            prior = Some(reply);
        }
        Err(PlanError::MaxRoundsExceeded {
            stage,
            rounds: cfg.max_rounds,
            last,
        })
    }
}

/// Stage A: subtasks and constraints from a demonstration.
pub fn interpret_demo(
    transcript: &DemonstrationTranscript,
    domain: &Domain,
    backend: &mut dyn PlannerBackend,
    gate: &mut dyn ReviewGate,
    cfg: &PlanConfig,
    log: &mut ReviewLog,
) -> Result<Interpretation, PlanError> {
    transcript.validate()?;
    let prompt = Prompt::interpret(transcript, domain);
    let round = Round {
        backend,
        gate: Some(gate),
        prompt: &prompt,
        stage: ReviewStage::Interpretation,
        cfg,
        log,
    };
    round.negotiate(
        |text| {
            let i = parse_interpretation(text)?;
            check_interpretation(&i, &transcript.objects, domain)?;
            Ok(i)
        },
        |i: &Interpretation| ReviewPayload::Subtasks {
            subtasks: i.subtasks.clone(),
            constraints: i.constraints.clone(),
        },
    )
}

/// Stage B, first half: the action sequence for subtask `stage`.
pub fn plan_action_sequence(
    stage: usize,
    subtask: &Subtask,
    state: &WorldState,
    backend: &mut dyn PlannerBackend,
    cfg: &PlanConfig,
    log: &mut ReviewLog,
) -> Result<Vec<ActionInstance>, PlanError> {
    let prompt = Prompt::Sequence {
        stage,
        subtask: subtask.clone(),
        state: state.clone(),
    };
    let round = Round {
        backend,
        gate: None,
        prompt: &prompt,
        stage: ReviewStage::Subtree(stage),
        cfg,
        log,
    };
    round.negotiate(
        |text| {
            let actions = parse_sequence(text)?;
            verify_sequence(subtask, &actions, state)?;
            Ok(actions)
        },
        |_| unreachable!("sequences are not gated"),
    )
}

/// Stage B, second half: the subtree for subtask `stage`, checked
/// syntactically and by virtual execution. Returns the tree and the state
/// it leads to.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_subtree(
    stage: usize,
    subtask: &Subtask,
    actions: &[ActionInstance],
    state: &WorldState,
    backend: &mut dyn PlannerBackend,
    gate: &mut dyn ReviewGate,
    cfg: &PlanConfig,
    log: &mut ReviewLog,
) -> Result<(BehaviorTree, WorldState), PlanError> {
    let prompt = Prompt::Subtree {
        stage,
        subtask: subtask.clone(),
        actions: actions.to_vec(),
        state: state.clone(),
    };
    let round = Round {
        backend,
        gate: Some(gate),
        prompt: &prompt,
        stage: ReviewStage::Subtree(stage),
        cfg,
        log,
    };
    round.negotiate(
        |text| accept_subtree(text, stage, subtask, state),
        |(tree, _)| ReviewPayload::Tree {
            subtask: subtask.clone(),
            document: to_document(tree),
        },
    )
}

/// Runs both stages and chains the per-stage states.
pub fn generate_plan(
    transcript: &DemonstrationTranscript,
    setup: &SetupDoc,
    domain: Arc<Domain>,
    backend: &mut dyn PlannerBackend,
    gate: &mut dyn ReviewGate,
    cfg: &PlanConfig,
) -> Result<PlanBundle, PlanError> {
    let (initial, _) = init_state(setup, domain.clone())?;
    let mut log = ReviewLog::new();
    let interp = interpret_demo(transcript, &domain, backend, gate, cfg, &mut log)?;
    let mut state = initial.with_constraints(&interp.constraints)?;
    let mut bundle = PlanBundle {
        subtasks: interp.subtasks.clone(),
        constraints: interp.constraints,
        subtrees: Vec::new(),
        goals: Vec::new(),
        snapshots: vec![state.clone()],
        review_log: Vec::new(),
    };
    for (i, t) in interp.subtasks.iter().enumerate() {
        let actions = plan_action_sequence(i, t, &state, backend, cfg, &mut log)
            .map_err(|e| e.at_stage(i))?;
        let (tree, next) = synthesize_subtree(i, t, &actions, &state, backend, gate, cfg, &mut log)
            .map_err(|e| e.at_stage(i))?;
        bundle
            .goals
            .push(t.goal(&domain).map_err(|e| e.at_stage(i))?);
        bundle.subtrees.push(tree);
        bundle.snapshots.push(next.clone());
        state = next;
    }
    bundle.review_log = log;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::fixtures;
    use crate::planner::{AutoApprove, FaultyBackend, MockBackend, RuleBackend, ScriptedGate};

    fn domain() -> Arc<Domain> {
        Arc::new(Domain::gearset())
    }

    fn setup() -> SetupDoc {
        SetupDoc::from_json(fixtures::SETUP).unwrap()
    }

    fn transcript(len: usize) -> DemonstrationTranscript {
        DemonstrationTranscript::from_json(fixtures::transcript(len).unwrap()).unwrap()
    }

    fn gold(len: usize) -> Interpretation {
        serde_json::from_str(fixtures::gold(len).unwrap()).unwrap()
    }

    fn mock(len: usize) -> MockBackend {
        MockBackend::from_json(fixtures::mock_script(len).unwrap()).unwrap()
    }

    #[test]
    fn mock_backend_yields_a_chained_five_stage_plan() {
        let b = generate_plan(
            &transcript(5),
            &setup(),
            domain(),
            &mut mock(5),
            &mut AutoApprove,
            &PlanConfig::default(),
        )
        .unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.subtasks, gold(5).subtasks);
        assert_eq!(b.snapshots.len(), 6);
        b.check_chain().unwrap();
        assert!(b.review_log.iter().all(|r| r.verdict == Verdict::Approve));
    }

    #[test]
    fn faulty_backend_with_corrective_gate_converges_to_the_clean_plan() {
        let cfg = PlanConfig::default();
        let clean = generate_plan(
            &transcript(5),
            &setup(),
            domain(),
            &mut mock(5),
            &mut AutoApprove,
            &cfg,
        )
        .unwrap();
        let mut faulty = FaultyBackend::scripted_json(mock(5), fixtures::TASK5_FAULTS).unwrap();
        let mut gate = ScriptedGate::with_gold(gold(5));
        let b = generate_plan(
            &transcript(5),
            &setup(),
            domain(),
            &mut faulty,
            &mut gate,
            &cfg,
        )
        .unwrap();
        assert_eq!(b.subtrees, clean.subtrees);
        assert_eq!(b.snapshots, clean.snapshots);
        let refined: Vec<_> = b
            .review_log
            .iter()
            .filter(|r| r.round > 0)
            .map(|r| r.stage)
            .collect();
        assert_eq!(
            refined,
            [
                ReviewStage::Interpretation,
                ReviewStage::Subtree(1),
                ReviewStage::Subtree(3)
            ]
        );
        assert!(b.review_log.iter().all(|r| r.round <= 1));
    }

    #[test]
    fn unknown_object_is_corrected_on_the_first_refine_round() {
        let mut bad = gold(1);
        bad.subtasks[0].part = "gear9".into();
        let script = json!({"interpret": [bad, gold(1)]}).to_string();
        let mut log = ReviewLog::new();
        let d = domain();
        let got = interpret_demo(
            &transcript(1),
            &d,
            &mut MockBackend::from_json(&script).unwrap(),
            &mut AutoApprove,
            &PlanConfig::default(),
            &mut log,
        )
        .unwrap();
        assert_eq!(got, gold(1));
        assert_eq!(log[0].source, ReviewSource::Validator);
        assert!(matches!(&log[0].verdict, Verdict::Feedback(t) if t.contains("gear9")));
        let strict = PlanConfig { max_rounds: 0 };
        let err = interpret_demo(
            &transcript(1),
            &d,
            &mut MockBackend::from_json(&script).unwrap(),
            &mut AutoApprove,
            &strict,
            &mut ReviewLog::new(),
        )
        .unwrap_err();
        assert!(matches!(err, PlanError::UngroundedSymbol(_)), "{err}");
    }

    #[test]
    fn persistent_garbage_exhausts_rounds() {
        let mut m = MockBackend::from_json(r#"{"interpret": ["nonsense"]}"#).unwrap();
        let err = interpret_demo(
            &transcript(1),
            &domain(),
            &mut m,
            &mut AutoApprove,
            &PlanConfig { max_rounds: 2 },
            &mut ReviewLog::new(),
        )
        .unwrap_err();
        assert!(
            matches!(err, PlanError::MaxRoundsExceeded { rounds: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn empty_transcript_fails_at_interpretation() {
        let mut t = transcript(1);
        t.keyframes.clear();
        let err = generate_plan(
            &t,
            &setup(),
            domain(),
            &mut RuleBackend,
            &mut AutoApprove,
            &PlanConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PlanError::InvalidTranscript(_)));
    }

    #[test]
    fn rule_backend_plans_are_reproducible() {
        let run = || {
            generate_plan(
                &transcript(3),
                &setup(),
                domain(),
                &mut RuleBackend,
                &mut AutoApprove,
                &PlanConfig::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        a.check_chain().unwrap();
    }

    #[test]
    fn scripted_malformed_subtree_is_a_schema_violation() {
        let script = json!({
            "interpret": [gold(1)],
            "subtree": {"0": [{"tree": {"kind": "sequence", "id": "b0", "children": []}}]}
        })
        .to_string();
        let err = generate_plan(
            &transcript(1),
            &setup(),
            domain(),
            &mut MockBackend::from_json(&script).unwrap(),
            &mut AutoApprove,
            &PlanConfig { max_rounds: 0 },
        )
        .unwrap_err();
        assert!(matches!(err.root(), PlanError::SchemaViolation(_)), "{err}");
        assert!(matches!(err, PlanError::AtStage { stage: 0, .. }));
    }

    #[test]
    fn scripted_sequence_without_pick_up_is_incoherent() {
        let script = json!({
            "interpret": [gold(1)],
            "sequence": {"0": [{"actions": ["retrieve_pose(gear1)", "retrieve_pose(shaft1)", "insert(gripper, gear1, shaft1)"]}]}
        })
        .to_string();
        let err = generate_plan(
            &transcript(1),
            &setup(),
            domain(),
            &mut MockBackend::from_json(&script).unwrap(),
            &mut AutoApprove,
            &PlanConfig { max_rounds: 0 },
        )
        .unwrap_err();
        assert!(
            matches!(err.root(), PlanError::IncoherentSequence { step: 2, .. }),
            "{err}"
        );
    }
}
