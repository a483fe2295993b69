//! Deterministic rule-based planner used when no backend answers, and for
//! replanning during execution.

use crate::atom::{ActionInstance, Atom};
use crate::bt::{make_action_unit, BehaviorTree, BtNode, Provenance, TreeMeta};
use crate::world::WorldState;

use super::{PlanError, Subtask};

/// Chains `actions` from `state` through their schemas and checks that the
/// last one establishes the subtask goal. Returns the final state.
pub fn verify_sequence(
    subtask: &Subtask,
    actions: &[ActionInstance],
    state: &WorldState,
) -> Result<WorldState, PlanError> {
    let goal = subtask.goal(state.domain())?;
    let mut s = state.clone();
    for (step, a) in actions.iter().enumerate() {
        s = s
            .apply_effects(a)
            .map_err(|e| PlanError::IncoherentSequence {
                step,
                reason: e.to_string(),
            })?;
    }
    match actions.last() {
        None if s.holds(&goal)? => Ok(s),
        None => Err(PlanError::IncoherentSequence {
            step: 0,
            reason: format!("empty sequence but {goal} does not hold"),
        }),
        Some(last) => {
            if !state.effects_of(last)?.add.contains(&goal) {
                return Err(PlanError::IncoherentSequence {
                    step: actions.len() - 1,
                    reason: format!("{last} does not establish {goal}"),
                });
            }
            Ok(s)
        }
    }
}

/// Plans the primitive actions that realize `subtask` from `state`.
pub fn fallback_sequence(
    subtask: &Subtask,
    state: &WorldState,
) -> Result<Vec<ActionInstance>, PlanError> {
    let domain = state.domain().clone();
    let goal = subtask.goal(&domain)?;
    if state.holds(&goal)? {
        return Ok(Vec::new());
    }
    let tool = state
        .tools()
        .iter()
        .find(|(_, parts)| parts.contains(&subtask.part))
        .map(|(t, _)| t.clone())
        .ok_or_else(|| PlanError::NoTool(subtask.part.clone()))?;
    let known = |o| state.holds(&Atom::unary("pose_is_known", o));
    let mut out = Vec::new();
    if !state.holds(&Atom::binary("hold", tool.clone(), subtask.part.clone()))? {
        for held in state
            .relations()
            .iter()
            .filter(|r| r.pred == "hold" && r.args[0] == tool)
        {
            out.push(ActionInstance::new(
                "put_down",
                [tool.clone(), held.args[1].clone()],
            ));
        }
        if !known(subtask.part.clone())? {
            out.push(ActionInstance::new("retrieve_pose", [subtask.part.clone()]));
        }
        out.push(ActionInstance::new(
            "pick_up",
            [tool.clone(), subtask.part.clone()],
        ));
    }
    if !known(subtask.target.clone())? {
        out.push(ActionInstance::new(
            "retrieve_pose",
            [subtask.target.clone()],
        ));
    }
    out.push(subtask.action(&domain, &tool)?);
    verify_sequence(subtask, &out, state)?;
    Ok(out)
}

/// Builds the subtree for stage `stage`: `Selector(goal, Sequence(units))`,
/// one action unit per action. Without actions the goal condition alone.
pub fn fallback_subtree(
    stage: usize,
    subtask: &Subtask,
    actions: &[ActionInstance],
    state: &WorldState,
) -> Result<BehaviorTree, PlanError> {
    let domain = state.domain();
    let goal = subtask.goal(domain)?;
    let meta = TreeMeta {
        subtask: Some(stage),
        goal: Some(goal.clone()),
        provenance: Provenance::Generated,
    };
    let id = format!("b{stage}");
    if actions.is_empty() {
        return Ok(BehaviorTree::with_meta(BtNode::condition(id, goal), meta));
    }
    let mut units = Vec::with_capacity(actions.len());
    for (k, a) in actions.iter().enumerate() {
        let fx = state.effects_of(a)?;
        let target = fx
            .add
            .first()
            .cloned()
            .ok_or_else(|| PlanError::IncoherentSequence {
                step: k,
                reason: format!("{a} has no effect to target"),
            })?;
        units.push(make_action_unit(
            domain,
            &format!("{id}.{k}"),
            target,
            fx.pre,
            a.clone(),
        )?);
    }
    let root = BtNode::selector(
        id.clone(),
        vec![
            BtNode::condition(format!("{id}.g"), goal),
            BtNode::sequence(format!("{id}.s"), units),
        ],
    );
    Ok(BehaviorTree::with_meta(root, meta))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures;
    use crate::world::{init_state, virtual_tick, Domain, SetupDoc};

    fn state() -> WorldState {
        let setup = SetupDoc::from_json(fixtures::SETUP).unwrap();
        let (s, _) = init_state(&setup, Arc::new(Domain::gearset())).unwrap();
        s.with_constraints(&[Atom::binary("can_insert_to", "gear1", "shaft1")])
            .unwrap()
    }

    #[test]
    fn insert_from_empty_gripper() {
        let t = Subtask::new("insert", "gear1", "shaft1");
        let seq: Vec<String> = fallback_sequence(&t, &state())
            .unwrap()
            .iter()
            .map(|a| a.to_string())
            .collect();
        assert_eq!(
            seq,
            [
                "retrieve_pose(gear1)",
                "pick_up(gripper, gear1)",
                "retrieve_pose(shaft1)",
                "insert(gripper, gear1, shaft1)"
            ]
        );
    }

    #[test]
    fn satisfied_goal_gives_empty_sequence_and_bare_condition() {
        let t = Subtask::new("place", "shaft1", "base");
        let s = state();
        let seq = fallback_sequence(&t, &s).unwrap();
        assert!(seq.is_empty());
        let tree = fallback_subtree(0, &t, &seq, &s).unwrap();
        assert_eq!(
            tree.root.as_condition(),
            Some(&Atom::binary("is_placed_on", "shaft1", "base"))
        );
    }

    #[test]
    fn missing_pick_up_is_incoherent_at_the_insert_step() {
        let t = Subtask::new("insert", "gear1", "shaft1");
        let seq = [
            ActionInstance::new("retrieve_pose", ["gear1"]),
            ActionInstance::new("retrieve_pose", ["shaft1"]),
            ActionInstance::new("insert", ["gripper", "gear1", "shaft1"]),
        ];
        let err = verify_sequence(&t, &seq, &state()).unwrap_err();
        assert!(
            matches!(err, PlanError::IncoherentSequence { step: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn subtree_reaches_goal_under_virtual_tick() {
        let t = Subtask::new("insert", "gear1", "shaft1");
        let s = state();
        let seq = fallback_sequence(&t, &s).unwrap();
        let tree = fallback_subtree(0, &t, &seq, &s).unwrap();
        let next = virtual_tick(&tree, &s).unwrap();
        assert!(next
            .holds(&Atom::binary("is_inserted_to", "gear1", "shaft1"))
            .unwrap());
        assert!(next.holds(&Atom::unary("is_empty", "gripper")).unwrap());
        assert_eq!(verify_sequence(&t, &seq, &s).unwrap(), next);
    }
}
