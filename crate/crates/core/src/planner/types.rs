use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atom::{ActionInstance, Atom, ObjectId};
use crate::world::Domain;

use super::PlanError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame_id: u64,
    /// Description of what the frame shows.
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Narration {
    pub text: String,
    pub lang: String,
}

/// Keyframe descriptions and narration of one demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemonstrationTranscript {
    pub keyframes: Vec<Keyframe>,
    pub narration: Narration,
    pub objects: Vec<ObjectId>,
}

impl DemonstrationTranscript {
    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let t: Self =
            serde_json::from_str(text).map_err(|e| PlanError::InvalidTranscript(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.keyframes.is_empty() {
            return Err(PlanError::InvalidTranscript(
                "at least one keyframe is required".into(),
            ));
        }
        if self.objects.is_empty() {
            return Err(PlanError::InvalidTranscript(
                "object vocabulary is empty".into(),
            ));
        }
        Ok(())
    }
}

/// `(skill, part, target)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtask {
    pub skill: String,
    pub part: ObjectId,
    pub target: ObjectId,
}

impl Subtask {
    pub fn new(skill: &str, part: &str, target: &str) -> Self {
        Self {
            skill: skill.to_owned(),
            part: part.into(),
            target: target.into(),
        }
    }

    /// The relation whose establishment completes the subtask.
    pub fn goal(&self, domain: &Domain) -> Result<Atom, PlanError> {
        let b = domain.skills.get(&self.skill).ok_or_else(|| {
            PlanError::UngroundedSymbol(format!("unknown skill `{}`", self.skill))
        })?;
        Ok(Atom::binary(
            b.relation.clone(),
            self.part.clone(),
            self.target.clone(),
        ))
    }

    /// The constraint that licenses the subtask.
    pub fn constraint(&self, domain: &Domain) -> Result<Atom, PlanError> {
        let b = domain.skills.get(&self.skill).ok_or_else(|| {
            PlanError::UngroundedSymbol(format!("unknown skill `{}`", self.skill))
        })?;
        Ok(Atom::binary(
            b.constraint.clone(),
            self.part.clone(),
            self.target.clone(),
        ))
    }

    /// The skill action performed with `tool`.
    pub fn action(&self, domain: &Domain, tool: &ObjectId) -> Result<ActionInstance, PlanError> {
        let b = domain.skills.get(&self.skill).ok_or_else(|| {
            PlanError::UngroundedSymbol(format!("unknown skill `{}`", self.skill))
        })?;
        Ok(ActionInstance::new(
            b.action.clone(),
            [tool.clone(), self.part.clone(), self.target.clone()],
        ))
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.skill, self.part, self.target)
    }
}

/// Stage-A output: subtasks and the constraints among objects.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interpretation {
    pub subtasks: Vec<Subtask>,
    pub constraints: Vec<Atom>,
}

/// Gold annotation sidecar of a transcript.
pub type Gold = Interpretation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "index", rename_all = "snake_case")]
pub enum ReviewStage {
    Interpretation,
    Subtree(usize),
}

impl fmt::Display for ReviewStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReviewStage::Interpretation => f.write_str("interpretation"),
            ReviewStage::Subtree(i) => write!(f, "subtree {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReviewPayload {
    Subtasks {
        subtasks: Vec<Subtask>,
        constraints: Vec<Atom>,
    },
    Tree {
        subtask: Subtask,
        document: Value,
    },
}

/// An artifact waiting for a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub stage: ReviewStage,
    pub round: u32,
    pub payload: ReviewPayload,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "text", rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Feedback(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewSource {
    /// A review gate (human or scripted).
    Gate,
    /// Automatic validation of the reply.
    Validator,
}

/// One entry of a plan's review log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub stage: ReviewStage,
    pub round: u32,
    pub source: ReviewSource,
    pub verdict: Verdict,
}
