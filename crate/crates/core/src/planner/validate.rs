//! Syntactic and logical checks on generated artifacts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atom::{Atom, ObjectId};
use crate::bt::{
    as_unit, from_document, validate_document, BehaviorTree, NodeId, NodeKind, Violation,
};
use crate::world::{virtual_tick, Domain, SymbolClass, WorldError, WorldState};

use super::{Interpretation, PlanError, Subtask};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Checks a tree document against the node grammar and, given a domain, its
/// vocabulary.
pub fn validate_syntactic(doc: &Value, domain: Option<&Domain>) -> SyntaxReport {
    let violations = validate_document(doc, domain);
    SyntaxReport {
        valid: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicReport {
    pub coherent: bool,
    /// The goal already held before execution.
    pub noop: bool,
    pub goal: Option<Atom>,
    pub failed_node: Option<NodeId>,
    pub message: Option<String>,
}

/// The goal a tree establishes: its metadata goal, else the leading
/// condition of the root.
pub fn tree_goal(tree: &BehaviorTree) -> Option<Atom> {
    if let Some(g) = &tree.meta.goal {
        return Some(g.clone());
    }
    match &tree.root.kind {
        NodeKind::Condition(a) => Some(a.clone()),
        NodeKind::Selector(c) => c.first().and_then(|n| n.as_condition()).cloned(),
        _ => None,
    }
}

/// Virtually ticks `tree` from `state`; coherent iff it succeeds and the
/// goal holds afterwards.
pub fn validate_logical(tree: &BehaviorTree, state: &WorldState) -> LogicReport {
    let goal = tree_goal(tree);
    let mut report = LogicReport {
        coherent: false,
        noop: false,
        goal: goal.clone(),
        failed_node: None,
        message: None,
    };
    let Some(goal) = goal else {
        report.message = Some("tree declares no goal".into());
        return report;
    };
    report.noop = state.holds(&goal).unwrap_or(false);
    match check_logical(tree, state, &goal) {
        Ok(_) => {
            report.coherent = true;
            if report.noop {
                report.message = Some(format!("no-op: {goal} already holds"));
            }
        }
        Err(PlanError::VirtualFailure { node }) => {
            report.message = Some(format!("virtual execution failed at `{node}`"));
            report.failed_node = Some(node);
        }
        Err(e) => report.message = Some(e.to_string()),
    }
    report
}

pub(crate) fn check_logical(
    tree: &BehaviorTree,
    state: &WorldState,
    goal: &Atom,
) -> Result<WorldState, PlanError> {
    let next = virtual_tick(tree, state).map_err(|e| match e.root() {
        WorldError::VirtualFailure { node } => PlanError::VirtualFailure { node: node.clone() },
        _ => PlanError::World(e),
    })?;
    if !next.holds(goal)? {
        return Err(PlanError::GoalNotEstablished(goal.to_string()));
    }
    Ok(next)
}

/// Parses a tree document, rejecting any syntactic violation.
pub(crate) fn parse_tree_document(doc: &Value, domain: &Domain) -> Result<BehaviorTree, PlanError> {
    let report = validate_syntactic(doc, Some(domain));
    if !report.valid {
        return Err(PlanError::SchemaViolation(report.violations));
    }
    Ok(from_document(doc)?)
}

/// Requires `Selector(Condition(goal), Sequence(units...))` or the bare goal
/// condition.
pub(crate) fn check_shape(tree: &BehaviorTree, goal: &Atom) -> Result<(), PlanError> {
    let fail = |path: &str, message: String| {
        Err(PlanError::SchemaViolation(vec![Violation {
            path: path.into(),
            message,
        }]))
    };
    match &tree.root.kind {
        NodeKind::Condition(a) if a == goal => Ok(()),
        NodeKind::Selector(c) => {
            let [head, body] = c.as_slice() else {
                return fail(
                    "root",
                    "root selector needs exactly a goal condition and a sequence".into(),
                );
            };
            if head.as_condition() != Some(goal) {
                return fail(
                    "root/children[0]",
                    format!("expected goal condition {goal}"),
                );
            }
            let NodeKind::Sequence(units) = &body.kind else {
                return fail(
                    "root/children[1]",
                    "expected a sequence of action units".into(),
                );
            };
            for (k, u) in units.iter().enumerate() {
                if as_unit(u).is_none() {
                    return fail(
                        &format!("root/children[1]/children[{k}]"),
                        "expected an action unit".into(),
                    );
                }
            }
            Ok(())
        }
        _ => fail("root", format!("expected a selector over goal {goal}")),
    }
}

/// Checks a Stage-A reply against the object vocabulary and the domain.
pub fn check_interpretation(
    interp: &Interpretation,
    objects: &[ObjectId],
    domain: &Domain,
) -> Result<(), PlanError> {
    if interp.subtasks.is_empty() {
        return Err(PlanError::ParseFailure("reply contains no subtasks".into()));
    }
    let known: BTreeSet<&ObjectId> = objects.iter().collect();
    let grounded = |o: &ObjectId, what: &str| {
        if known.contains(o) {
            Ok(())
        } else {
            Err(PlanError::UngroundedSymbol(format!(
                "{what}: unknown object `{o}`"
            )))
        }
    };
    for (i, c) in interp.constraints.iter().enumerate() {
        let what = format!("constraint {i}");
        match domain.check_atom(c) {
            Ok(SymbolClass::Constraint) => {}
            Ok(_) => {
                return Err(PlanError::UngroundedSymbol(format!(
                    "{what}: `{}` is not a constraint",
                    c.pred
                )));
            }
            Err(e) => return Err(PlanError::UngroundedSymbol(format!("{what}: {e}"))),
        }
        for o in &c.args {
            grounded(o, &what)?;
        }
    }
    for (i, t) in interp.subtasks.iter().enumerate() {
        let what = format!("subtask {i}");
        if !domain.skills.contains_key(&t.skill) {
            return Err(PlanError::UngroundedSymbol(format!(
                "{what}: unknown skill `{}`",
                t.skill
            )));
        }
        grounded(&t.part, &what)?;
        grounded(&t.target, &what)?;
        if t.part == t.target {
            return Err(PlanError::UngroundedSymbol(format!(
                "{what}: part and target coincide"
            )));
        }
        let c = t.constraint(domain)?;
        if !interp.constraints.contains(&c) {
            return Err(PlanError::UngroundedSymbol(format!(
                "{what}: {t} lacks constraint {c}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn parse_interpretation(text: &str) -> Result<Interpretation, PlanError> {
    serde_json::from_str(text).map_err(|e| PlanError::ParseFailure(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceReply {
    actions: Vec<crate::atom::ActionInstance>,
}

pub(crate) fn parse_sequence(text: &str) -> Result<Vec<crate::atom::ActionInstance>, PlanError> {
    serde_json::from_str::<SequenceReply>(text)
        .map(|r| r.actions)
        .map_err(|e| PlanError::ParseFailure(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubtreeReply {
    tree: Value,
}

pub(crate) fn parse_subtree(text: &str) -> Result<Value, PlanError> {
    serde_json::from_str::<SubtreeReply>(text)
        .map(|r| r.tree)
        .map_err(|e| PlanError::ParseFailure(e.to_string()))
}

/// Parses and fully checks a Stage-B subtree reply for `subtask` at `stage`.
/// Returns the tree and the state after its virtual execution.
pub(crate) fn accept_subtree(
    text: &str,
    stage: usize,
    subtask: &Subtask,
    state: &WorldState,
) -> Result<(BehaviorTree, WorldState), PlanError> {
    let domain = state.domain();
    let goal = subtask.goal(domain)?;
    let mut tree = parse_tree_document(&parse_subtree(text)?, domain)?;
    check_shape(&tree, &goal)?;
    tree.meta.subtask = Some(stage);
    tree.meta.goal = Some(goal.clone());
    let next = check_logical(&tree, state, &goal)?;
    Ok((tree, next))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use serde_json::json;

    use super::*;
    use crate::atom::ActionInstance;
    use crate::bt::{make_action_unit, to_document, BtNode};
    use crate::fixtures;
    use crate::planner::{fallback_sequence, fallback_subtree};
    use crate::world::{init_state, SetupDoc};

    fn state() -> WorldState {
        let setup = SetupDoc::from_json(fixtures::SETUP).unwrap();
        let (s, _) = init_state(&setup, Arc::new(Domain::gearset())).unwrap();
        s.with_constraints(&[Atom::binary("can_place_on", "shaft2", "base")])
            .unwrap()
    }

    #[test]
    fn fallback_tree_is_valid_and_coherent() {
        let s = state();
        let t = Subtask::new("place", "shaft2", "base");
        let tree = fallback_subtree(1, &t, &fallback_sequence(&t, &s).unwrap(), &s).unwrap();
        assert!(validate_syntactic(&to_document(&tree), Some(s.domain())).valid);
        let r = validate_logical(&tree, &s);
        assert!(r.coherent && !r.noop, "{r:?}");
    }

    #[test]
    fn childless_selector_fails_with_path() {
        let doc = json!({"kind": "selector", "id": "r", "children": [
            {"kind": "condition", "id": "g", "atom": "is_empty(gripper)"},
            {"kind": "selector", "id": "x", "children": []}]});
        let r = validate_syntactic(&doc, None);
        assert!(!r.valid);
        assert_eq!(r.violations[0].path, "root/children[1]");
    }

    #[test]
    fn place_before_pick_fails_at_hold_condition() {
        let s = state();
        let d = s.domain();
        let place = ActionInstance::new("place", ["gripper", "shaft2", "base"]);
        let pick = ActionInstance::new("pick_up", ["gripper", "shaft2"]);
        let pre = |a: &ActionInstance| s.effects_of(a).unwrap().pre;
        let goal = Atom::binary("is_placed_on", "shaft2", "base");
        let units = vec![
            make_action_unit(d, "u0", goal.clone(), pre(&place), place.clone()).unwrap(),
            make_action_unit(
                d,
                "u1",
                Atom::binary("hold", "gripper", "shaft2"),
                pre(&pick),
                pick,
            )
            .unwrap(),
        ];
        let tree = BehaviorTree::new(BtNode::selector(
            "r",
            vec![BtNode::condition("g", goal), BtNode::sequence("s", units)],
        ));
        let r = validate_logical(&tree, &s);
        assert!(!r.coherent);
        assert_eq!(r.failed_node, Some(NodeId::new("u0.p0")));
        let hold = tree
            .root
            .find(&NodeId::new("u0.p0"))
            .unwrap()
            .as_condition()
            .unwrap();
        assert_eq!(hold.pred, "hold");
    }

    #[test]
    fn satisfied_goal_passes_as_noop() {
        let tree = BehaviorTree::new(BtNode::condition(
            "b0",
            Atom::binary("is_placed_on", "shaft1", "base"),
        ));
        let r = validate_logical(&tree, &state());
        assert!(r.coherent && r.noop);
        assert!(r.message.unwrap().starts_with("no-op"));
    }

    #[test]
    fn interpretation_checks_grounding_and_constraints() {
        let d = Domain::gearset();
        let objects: Vec<ObjectId> = ["gear1", "shaft1"]
            .into_iter()
            .map(ObjectId::from)
            .collect();
        let ok = Interpretation {
            subtasks: vec![Subtask::new("insert", "gear1", "shaft1")],
            constraints: vec![Atom::binary("can_insert_to", "gear1", "shaft1")],
        };
        check_interpretation(&ok, &objects, &d).unwrap();
        let mut bad = ok.clone();
        bad.subtasks[0].target = "shaft9".into();
        assert!(matches!(
            check_interpretation(&bad, &objects, &d),
            Err(PlanError::UngroundedSymbol(_))
        ));
        let mut missing = ok.clone();
        missing.constraints.clear();
        assert!(check_interpretation(&missing, &objects, &d).is_err());
        let mut skill = ok;
        skill.subtasks[0].skill = "weld".into();
        assert!(check_interpretation(&skill, &objects, &d).is_err());
    }
}
