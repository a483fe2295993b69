//! Action units: `Selector(Condition(target), Sequence(Condition(pre)..., Action))`.

use crate::atom::{ActionInstance, Atom};
use crate::world::{Domain, Role};

use super::node::{BtNode, NodeKind};
use super::BtError;

/// Builds an action unit rooted at node `id`. Child ids are derived from it.
///
/// Fails with `SchemaMismatch` when `target` is not among the add-effects
/// the schema of `action` declares.
pub fn make_action_unit(
    domain: &Domain,
    id: &str,
    target: Atom,
    preconditions: Vec<Atom>,
    action: ActionInstance,
) -> Result<BtNode, BtError> {
    let schema = domain.check_action(&action)?;
    let declared = if schema.tool_change {
        let tool = schema.index_of(Role::Tool).map(|i| &action.args[i]);
        domain.is_capability(&target.pred) && tool.is_some_and(|t| target.args.first() == Some(t))
    } else {
        schema.add.iter().any(|t| t.ground(&action.args) == target)
    };
    if !declared {
        return Err(BtError::SchemaMismatch { action, target });
    }
    let act = BtNode::action(format!("{id}.a"), action);
    let body = if preconditions.is_empty() {
        act
    } else {
        let mut children: Vec<BtNode> = preconditions
            .into_iter()
            .enumerate()
            .map(|(k, p)| BtNode::condition(format!("{id}.p{k}"), p))
            .collect();
        children.push(act);
        BtNode::sequence(format!("{id}.s"), children)
    };
    Ok(BtNode::selector(
        id,
        vec![BtNode::condition(format!("{id}.t"), target), body],
    ))
}

/// Borrowed view of a node that has the action-unit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitView<'a> {
    pub node: &'a BtNode,
    pub target: &'a Atom,
    pub preconditions: Vec<&'a Atom>,
    pub action: &'a ActionInstance,
    pub action_node: &'a BtNode,
}

/// Recognizes the action-unit shape.
pub fn as_unit(node: &BtNode) -> Option<UnitView<'_>> {
    let NodeKind::Selector(children) = &node.kind else {
        return None;
    };
    let [head, body] = children.as_slice() else {
        return None;
    };
    let target = head.as_condition()?;
    if let Some(action) = body.as_action() {
        return Some(UnitView {
            node,
            target,
            preconditions: Vec::new(),
            action,
            action_node: body,
        });
    }
    let NodeKind::Sequence(seq) = &body.kind else {
        return None;
    };
    let (last, pre) = seq.split_last()?;
    let action = last.as_action()?;
    let preconditions = pre
        .iter()
        .map(BtNode::as_condition)
        .collect::<Option<Vec<_>>>()?;
    Some(UnitView {
        node,
        target,
        preconditions,
        action,
        action_node: last,
    })
}

/// Action units under `scope`, in pre-order.
pub fn units(scope: &BtNode) -> impl Iterator<Item = UnitView<'_>> {
    scope.walk().filter_map(as_unit)
}

/// The first action unit under `scope` whose target is `atom`.
pub fn find_unit<'a>(scope: &'a BtNode, atom: &Atom) -> Option<&'a BtNode> {
    units(scope).find(|u| u.target == atom).map(|u| u.node)
}
