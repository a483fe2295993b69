//! Planner backends: scripted replies, a keyword interpreter and a fault
//! injecting wrapper.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::atom::{ActionInstance, Atom, ObjectId};
use crate::bt::to_document;
use crate::world::{Domain, WorldState};

use super::fallback::{fallback_sequence, fallback_subtree};
use super::{DemonstrationTranscript, Interpretation, Subtask};

/// A request to a backend. Replies are JSON documents:
///
/// - `interpret`: `{"subtasks": [{"skill", "part", "target"}], "constraints": ["c(a, b)"]}`
/// - `sequence`: `{"actions": ["pick_up(gripper, gear1)", ...]}`
/// - `subtree`: `{"tree": <tree document>}`
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "request", rename_all = "snake_case")]
pub enum Prompt {
    Interpret {
        transcript: DemonstrationTranscript,
        skills: Vec<String>,
        constraint_symbols: Vec<String>,
    },
    Sequence {
        stage: usize,
        subtask: Subtask,
        state: WorldState,
    },
    Subtree {
        stage: usize,
        subtask: Subtask,
        actions: Vec<ActionInstance>,
        state: WorldState,
    },
}

impl Prompt {
    pub fn interpret(transcript: &DemonstrationTranscript, domain: &Domain) -> Self {
        Prompt::Interpret {
            transcript: transcript.clone(),
            skills: domain.skills.keys().cloned().collect(),
            constraint_symbols: domain.constraints.iter().cloned().collect(),
        }
    }

    pub fn stage(&self) -> FaultStage {
        match self {
            Prompt::Interpret { .. } => FaultStage::Interpretation,
            Prompt::Sequence { .. } => FaultStage::Sequence,
            Prompt::Subtree { .. } => FaultStage::Subtree,
        }
    }

    fn index(&self) -> usize {
        match self {
            Prompt::Interpret { .. } => 0,
            Prompt::Sequence { stage, .. } | Prompt::Subtree { stage, .. } => *stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// The backend has no answer for this request; the caller falls back to
    /// the rule-based planner.
    #[error("backend declined the request")]
    Declined,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

pub trait PlannerBackend: Send {
    fn name(&self) -> &str;
    fn interpret(&mut self, prompt: &Prompt) -> Result<String, BackendError>;
    fn refine(
        &mut self,
        prompt: &Prompt,
        prior: &str,
        feedback: &str,
    ) -> Result<String, BackendError>;
}

/// Scripted replies per request kind.
///
/// ```json
/// {"interpret": [first_reply, refined_reply],
///  "sequence": {"0": [...]}, "subtree": {"2": [...]}}
/// ```
///
/// A string entry is returned verbatim, anything else is serialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub interpret: Vec<Value>,
    #[serde(default)]
    pub sequence: BTreeMap<usize, Vec<Value>>,
    #[serde(default)]
    pub subtree: BTreeMap<usize, Vec<Value>>,
}

/// Replays a [`MockScript`]. `interpret` returns the first reply for the
/// request, each `refine` the next one; the last reply repeats.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: MockScript,
    rounds: BTreeMap<(FaultStage, usize), usize>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            rounds: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    fn replies(&self, prompt: &Prompt) -> Option<&Vec<Value>> {
        let r = match prompt {
            Prompt::Interpret { .. } => Some(&self.script.interpret),
            Prompt::Sequence { stage, .. } => self.script.sequence.get(stage),
            Prompt::Subtree { stage, .. } => self.script.subtree.get(stage),
        };
        r.filter(|v| !v.is_empty())
    }

    fn reply(&mut self, prompt: &Prompt, advance: bool) -> Result<String, BackendError> {
        let key = (prompt.stage(), prompt.index());
        let round = match (advance, self.rounds.get(&key)) {
            (true, Some(r)) => r + 1,
            (true, None) => 1,
            (false, _) => 0,
        };
        let replies = self.replies(prompt).ok_or(BackendError::Declined)?;
        let text = match &replies[round.min(replies.len() - 1)] {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        self.rounds.insert(key, round);
        Ok(text)
    }
}

impl PlannerBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn interpret(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        self.reply(prompt, false)
    }

    fn refine(
        &mut self,
        prompt: &Prompt,
        _prior: &str,
        _feedback: &str,
    ) -> Result<String, BackendError> {
        self.reply(prompt, true)
    }
}

const SKILL_WORDS: &[(&str, &[&str])] = &[
    (
        "insert",
        &[
            "insert",
            "inserts",
            "inserted",
            "einsetzen",
            "einstecken",
            "stecken",
            "stecke",
            "setze",
        ],
    ),
    (
        "place",
        &[
            "place",
            "places",
            "placed",
            "put",
            "stellen",
            "stelle",
            "platzieren",
            "platziere",
            "legen",
        ],
    ),
    (
        "engage",
        &["engage", "engages", "mesh", "kämmen", "eingreifen"],
    ),
];

const PRONOUNS: &[&str] = &["it", "es", "ihn", "sie"];

/// Keyword interpreter for English and German narration. Declines Stage-B
/// requests.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBackend;

impl RuleBackend {
    pub fn interpret_transcript(transcript: &DemonstrationTranscript) -> Interpretation {
        let vocab: Vec<&str> = transcript.objects.iter().map(ObjectId::as_str).collect();
        let mut out = Interpretation::default();
        let mut last_part: Option<String> = None;
        for sentence in transcript.narration.text.split(['.', ';', '!', '?', '\n']) {
            let lower = sentence.to_lowercase();
            let words: Vec<&str> = lower
                .split(|c: char| !(c.is_alphanumeric() || c == '_'))
                .filter(|w| !w.is_empty())
                .collect();
            let skill = words.iter().find_map(|w| {
                SKILL_WORDS
                    .iter()
                    .find(|(_, ws)| ws.contains(w))
                    .map(|(s, _)| *s)
            });
            let mut mentioned: Vec<String> = Vec::new();
            for w in &words {
                if let Some(o) = vocab.iter().find(|o| o.to_lowercase() == *w) {
                    if !mentioned.iter().any(|m| m == o) {
                        mentioned.push((*o).to_owned());
                    }
                } else if PRONOUNS.contains(w) && mentioned.is_empty() {
                    if let Some(p) = &last_part {
                        mentioned.push(p.clone());
                    }
                }
            }
            let Some(skill) = skill else {
                if let Some(o) = mentioned.first() {
                    last_part = Some(o.clone());
                }
                continue;
            };
            if let [part, target, ..] = mentioned.as_slice() {
                let t = Subtask::new(skill, part, target);
                last_part = Some(part.clone());
                out.subtasks.push(t);
            }
        }
        let domain = Domain::gearset();
        for t in &out.subtasks {
            if let Ok(c) = t.constraint(&domain) {
                if !out.constraints.contains(&c) {
                    out.constraints.push(c);
                }
            }
        }
        out
    }
}

impl PlannerBackend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn interpret(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        match prompt {
            Prompt::Interpret { transcript, .. } => Ok(serde_json::to_string(
                &Self::interpret_transcript(transcript),
            )
            .expect("serializable")),
            _ => Err(BackendError::Declined),
        }
    }

    fn refine(
        &mut self,
        prompt: &Prompt,
        _prior: &str,
        _feedback: &str,
    ) -> Result<String, BackendError> {
        self.interpret(prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultStage {
    Interpretation,
    Sequence,
    Subtree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum FaultKind {
    /// Replaces the subtask target, rewriting its constraint to match.
    WrongTarget { object: ObjectId },
    /// Replaces the subtask part with an object outside the vocabulary.
    UnknownObject,
    /// Empties the first composite node of a tree, or a whole sequence.
    EmptyComposite,
    /// Removes the first action unit (or sequence entry) of the named action.
    DropAction { action: String },
    /// Replaces the reply with non-JSON text.
    Garbage,
}

/// One scripted fault. `index` is the subtask index for interpretation
/// faults and the stage index otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub stage: FaultStage,
    pub index: usize,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FaultPlan {
    Scripted(Vec<Fault>),
    /// Each subtask or subtree is corrupted with probability `rate`.
    Random {
        rate: f64,
        seed: u64,
    },
}

/// Corrupts first replies of an inner backend; refined replies pass through
/// unchanged. Stage-B requests the inner backend declines are answered from
/// the rule-based planner before corruption.
#[derive(Debug, Clone)]
pub struct FaultyBackend<B> {
    inner: B,
    plan: FaultPlan,
}

impl<B: PlannerBackend> FaultyBackend<B> {
    pub fn new(inner: B, plan: FaultPlan) -> Self {
        Self { inner, plan }
    }

    pub fn scripted_json(inner: B, faults: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(
            inner,
            FaultPlan::Scripted(serde_json::from_str(faults)?),
        ))
    }

    fn faults_for(&self, prompt: &Prompt, reply: &Value) -> Vec<Fault> {
        let stage = prompt.stage();
        match &self.plan {
            FaultPlan::Scripted(fs) => fs
                .iter()
                .filter(|f| {
                    f.stage == stage
                        && (stage == FaultStage::Interpretation || f.index == prompt.index())
                })
                .cloned()
                .collect(),
            FaultPlan::Random { rate, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(((stage as u64) << 32) | prompt.index() as u64);
                match prompt {
                    Prompt::Interpret { transcript, .. } => {
                        let n = reply["subtasks"].as_array().map_or(0, Vec::len);
                        let mut out = Vec::new();
                        for index in 0..n {
                            if rng.random_bool(*rate) {
                                let pick = rng.random_range(0..transcript.objects.len());
                                out.push(Fault {
                                    stage,
                                    index,
                                    kind: FaultKind::WrongTarget {
                                        object: transcript.objects[pick].clone(),
                                    },
                                });
                            }
                        }
                        out
                    }
                    _ if rng.random_bool(*rate) => {
                        let kind = if rng.random_bool(0.5) {
                            FaultKind::EmptyComposite
                        } else {
                            FaultKind::DropAction {
                                action: "pick_up".into(),
                            }
                        };
                        vec![Fault {
                            stage,
                            index: prompt.index(),
                            kind,
                        }]
                    }
                    _ => Vec::new(),
                }
            }
        }
    }

    fn clean(
        &mut self,
        prompt: &Prompt,
        refine: Option<(&str, &str)>,
    ) -> Result<String, BackendError> {
        let r = match refine {
            None => self.inner.interpret(prompt),
            Some((prior, fb)) => self.inner.refine(prompt, prior, fb),
        };
        match r {
            Err(BackendError::Declined) => fallback_reply(prompt).ok_or(BackendError::Declined),
            other => other,
        }
    }
}

/// The rule-based planner's answer to a Stage-B request.
pub(crate) fn fallback_reply(prompt: &Prompt) -> Option<String> {
    match prompt {
        Prompt::Interpret { .. } => None,
        Prompt::Sequence { subtask, state, .. } => {
            let actions = fallback_sequence(subtask, state).ok()?;
            Some(json!({ "actions": actions }).to_string())
        }
        Prompt::Subtree {
            stage,
            subtask,
            actions,
            state,
        } => {
            let tree = fallback_subtree(*stage, subtask, actions, state).ok()?;
            Some(json!({ "tree": to_document(&tree) }).to_string())
        }
    }
}

impl<B: PlannerBackend> PlannerBackend for FaultyBackend<B> {
    fn name(&self) -> &str {
        "faulty"
    }

    fn interpret(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        let clean = self.clean(prompt, None)?;
        let Ok(mut reply) = serde_json::from_str::<Value>(&clean) else {
            return Ok(clean);
        };
        let faults = self.faults_for(prompt, &reply);
        if faults.is_empty() {
            return Ok(clean);
        }
        for f in &faults {
            if f.kind == FaultKind::Garbage {
                return Ok("I could not produce a structured answer.".into());
            }
            corrupt(&mut reply, f);
        }
        Ok(reply.to_string())
    }

    fn refine(
        &mut self,
        prompt: &Prompt,
        prior: &str,
        feedback: &str,
    ) -> Result<String, BackendError> {
        self.clean(prompt, Some((prior, feedback)))
    }
}

fn corrupt(reply: &mut Value, fault: &Fault) {
    match fault.stage {
        FaultStage::Interpretation => corrupt_interpretation(reply, fault),
        FaultStage::Sequence => {
            if let Some(actions) = reply.get_mut("actions").and_then(Value::as_array_mut) {
                match &fault.kind {
                    FaultKind::EmptyComposite => actions.clear(),
                    FaultKind::DropAction { action } => {
                        if let Some(k) = actions
                            .iter()
                            .position(|a| action_name(a).as_deref() == Some(action))
                        {
                            actions.remove(k);
                        }
                    }
                    _ => {}
                }
            }
        }
        FaultStage::Subtree => {
            if let Some(tree) = reply.get_mut("tree") {
                let root = if tree.get("root").is_some() {
                    &mut tree["root"]
                } else {
                    tree
                };
                match &fault.kind {
                    FaultKind::EmptyComposite => {
                        empty_first_sequence(root);
                    }
                    FaultKind::DropAction { action } => {
                        drop_unit(root, action);
                    }
                    _ => {}
                }
            }
        }
    }
}

fn corrupt_interpretation(reply: &mut Value, fault: &Fault) {
    let Some(t) = reply
        .get_mut("subtasks")
        .and_then(Value::as_array_mut)
        .and_then(|s| s.get_mut(fault.index))
    else {
        return;
    };
    let Ok(old) = serde_json::from_value::<Subtask>(t.clone()) else {
        return;
    };
    match &fault.kind {
        FaultKind::WrongTarget { object } => {
            t["target"] = json!(object);
            if let Some(cs) = reply.get_mut("constraints").and_then(Value::as_array_mut) {
                for c in cs.iter_mut() {
                    if let Ok(mut a) = serde_json::from_value::<Atom>(c.clone()) {
                        if a.args == [old.part.clone(), old.target.clone()] {
                            a.args[1] = object.clone();
                            *c = json!(a.to_string());
                            break;
                        }
                    }
                }
            }
        }
        FaultKind::UnknownObject => t["part"] = json!("unknown_part"),
        _ => {}
    }
}

fn action_name(v: &Value) -> Option<String> {
    serde_json::from_value::<ActionInstance>(v.clone())
        .ok()
        .map(|a| a.name)
}

fn kind(v: &Value) -> Option<&str> {
    v.get("kind").and_then(Value::as_str)
}

fn empty_first_sequence(node: &mut Value) -> bool {
    if kind(node) == Some("sequence") {
        node["children"] = json!([]);
        return true;
    }
    if let Some(children) = node.get_mut("children").and_then(Value::as_array_mut) {
        for c in children {
            if empty_first_sequence(c) {
                return true;
            }
        }
    }
    false
}

/// Whether `node` is an action unit (or bare action) for `action`.
fn is_unit_of(node: &Value, action: &str) -> bool {
    let direct = |n: &Value| {
        kind(n) == Some("action") && action_name(&n["action"]).as_deref() == Some(action)
    };
    if direct(node) {
        return true;
    }
    if kind(node) != Some("selector") {
        return false;
    }
    let Some(body) = node["children"].as_array().and_then(|c| c.get(1)) else {
        return false;
    };
    direct(body)
        || (kind(body) == Some("sequence")
            && body["children"]
                .as_array()
                .and_then(|c| c.last())
                .is_some_and(direct))
}

fn drop_unit(node: &mut Value, action: &str) -> bool {
    let Some(children) = node.get_mut("children").and_then(Value::as_array_mut) else {
        return false;
    };
    if let Some(k) = children.iter().position(|c| is_unit_of(c, action)) {
        children.remove(k);
        return true;
    }
    children.iter_mut().any(|c| drop_unit(c, action))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn transcript(len: usize) -> DemonstrationTranscript {
        DemonstrationTranscript::from_json(fixtures::transcript(len).unwrap()).unwrap()
    }

    fn gold(len: usize) -> Interpretation {
        serde_json::from_str(fixtures::gold(len).unwrap()).unwrap()
    }

    #[test]
    fn rule_backend_reads_english_and_german() {
        for len in fixtures::TASK_LENGTHS {
            assert_eq!(
                RuleBackend::interpret_transcript(&transcript(len)),
                gold(len),
                "task {len}"
            );
        }
        let minimal = DemonstrationTranscript::from_json(fixtures::MINIMAL_TRANSCRIPT).unwrap();
        let got = RuleBackend::interpret_transcript(&minimal);
        assert_eq!(got.subtasks, [Subtask::new("insert", "gear", "shaft")]);
    }

    #[test]
    fn mock_replays_and_advances_on_refine() {
        let mut m = MockBackend::from_json(r#"{"interpret": ["first", {"a": 1}]}"#).unwrap();
        let p = Prompt::interpret(&transcript(1), &Domain::gearset());
        assert_eq!(m.interpret(&p).unwrap(), "first");
        assert_eq!(m.refine(&p, "first", "fix").unwrap(), r#"{"a":1}"#);
        assert_eq!(m.refine(&p, "", "again").unwrap(), r#"{"a":1}"#);
        assert_eq!(m.interpret(&p).unwrap(), "first");
    }

    #[test]
    fn wrong_target_rewrites_the_constraint() {
        let script = json!({"interpret": [gold(5)]}).to_string();
        let mut b = FaultyBackend::scripted_json(
            MockBackend::from_json(&script).unwrap(),
            fixtures::TASK5_FAULTS,
        )
        .unwrap();
        let p = Prompt::interpret(&transcript(5), &Domain::gearset());
        let got: Interpretation = serde_json::from_str(&b.interpret(&p).unwrap()).unwrap();
        assert_eq!(
            got.subtasks[2],
            Subtask::new("insert", "compound_gear", "shaft3")
        );
        assert!(got.constraints.contains(&Atom::binary(
            "can_insert_to",
            "compound_gear",
            "shaft3"
        )));
        let refined: Interpretation = serde_json::from_str(&b.refine(&p, "", "").unwrap()).unwrap();
        assert_eq!(refined, gold(5));
    }

    #[test]
    fn drop_unit_removes_only_the_named_unit() {
        let mut tree = json!({"kind": "selector", "id": "b", "children": [
            {"kind": "condition", "id": "b.g", "atom": "is_empty(gripper)"},
            {"kind": "sequence", "id": "b.s", "children": [
                {"kind": "action", "id": "b.0.a", "action": "retrieve_pose(gear1)"},
                {"kind": "selector", "id": "b.1", "children": [
                    {"kind": "condition", "id": "b.1.t", "atom": "hold(gripper, gear1)"},
                    {"kind": "action", "id": "b.1.a", "action": "pick_up(gripper, gear1)"}]}]}]});
        assert!(drop_unit(&mut tree, "pick_up"));
        let ids: Vec<_> = tree["children"][1]["children"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["id"].clone())
            .collect();
        assert_eq!(ids, [json!("b.0.a")]);
    }
}
