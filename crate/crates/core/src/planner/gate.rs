//! Review gates between generation rounds.

use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, Sender};

use super::{Gold, PlanError, ReviewItem, ReviewPayload, Subtask, Verdict};

pub trait ReviewGate: Send {
    fn review(&mut self, item: &ReviewItem) -> Result<Verdict, PlanError>;
}

/// Approves everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoApprove;

impl ReviewGate for AutoApprove {
    fn review(&mut self, _: &ReviewItem) -> Result<Verdict, PlanError> {
        Ok(Verdict::Approve)
    }
}

/// Replays queued verdicts, then compares subtask lists against a gold
/// annotation and answers with corrective feedback. Subtrees are approved
/// once the queue is empty.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGate {
    gold: Option<Gold>,
    queued: VecDeque<Verdict>,
}

impl ScriptedGate {
    pub fn with_gold(gold: Gold) -> Self {
        Self {
            gold: Some(gold),
            queued: VecDeque::new(),
        }
    }

    pub fn with_verdicts(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        Self {
            gold: None,
            queued: verdicts.into_iter().collect(),
        }
    }
}

impl ReviewGate for ScriptedGate {
    fn review(&mut self, item: &ReviewItem) -> Result<Verdict, PlanError> {
        if let Some(v) = self.queued.pop_front() {
            return Ok(v);
        }
        Ok(match (&item.payload, &self.gold) {
            (ReviewPayload::Subtasks { subtasks, .. }, Some(gold)) => {
                match corrective_feedback(subtasks, &gold.subtasks) {
                    Some(text) => Verdict::Feedback(text),
                    None => Verdict::Approve,
                }
            }
            _ => Verdict::Approve,
        })
    }
}

/// Feedback naming every position where `predicted` departs from `gold`, or
/// `None` when they agree.
pub(crate) fn corrective_feedback(predicted: &[Subtask], gold: &[Subtask]) -> Option<String> {
    let mut notes = Vec::new();
    for (k, g) in gold.iter().enumerate() {
        match predicted.get(k) {
            Some(p) if p == g => {}
            Some(p) => notes.push(format!("subtask {k} is {p} but should be {g}")),
            None => notes.push(format!("subtask {k} is missing; it should be {g}")),
        }
    }
    if predicted.len() > gold.len() {
        notes.push(format!("only {} subtasks were demonstrated", gold.len()));
    }
    if notes.is_empty() {
        None
    } else {
        Some(notes.join("; "))
    }
}

/// Forwards items over a channel and blocks for the verdict.
#[derive(Debug)]
pub struct InteractiveGate {
    items: Sender<ReviewItem>,
    verdicts: Receiver<Verdict>,
}

impl InteractiveGate {
    pub fn new(items: Sender<ReviewItem>, verdicts: Receiver<Verdict>) -> Self {
        Self { items, verdicts }
    }
}

impl ReviewGate for InteractiveGate {
    fn review(&mut self, item: &ReviewItem) -> Result<Verdict, PlanError> {
        self.items
            .send(item.clone())
            .map_err(|_| PlanError::ReviewAborted("reviewer disconnected".into()))?;
        self.verdicts
            .recv()
            .map_err(|_| PlanError::ReviewAborted("reviewer disconnected".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_names_wrong_positions() {
        let gold = [
            Subtask::new("insert", "a", "b"),
            Subtask::new("place", "b", "c"),
        ];
        assert_eq!(corrective_feedback(&gold, &gold), None);
        let bad = [
            Subtask::new("insert", "a", "b"),
            Subtask::new("place", "b", "d"),
        ];
        let fb = corrective_feedback(&bad, &gold).unwrap();
        assert!(fb.starts_with("subtask 1 is place(b, d)"), "{fb}");
        assert!(corrective_feedback(&gold[..1], &gold)
            .unwrap()
            .contains("missing"));
    }
}
