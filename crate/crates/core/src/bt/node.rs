use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::atom::{ActionInstance, Atom};

use super::BtError;

/// Identifier of a node, unique within its tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Sequence(Vec<BtNode>),
    Selector(Vec<BtNode>),
    Condition(Atom),
    Action(ActionInstance),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BtNode {
    pub id: NodeId,
    pub kind: NodeKind,
}

impl BtNode {
    pub fn sequence(id: impl Into<NodeId>, children: Vec<BtNode>) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Sequence(children),
        }
    }

    pub fn selector(id: impl Into<NodeId>, children: Vec<BtNode>) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Selector(children),
        }
    }

    pub fn condition(id: impl Into<NodeId>, atom: Atom) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Condition(atom),
        }
    }

    pub fn action(id: impl Into<NodeId>, action: ActionInstance) -> Self {
        Self {
            id: id.into(),
            kind: NodeKind::Action(action),
        }
    }

    pub fn children(&self) -> &[BtNode] {
        match &self.kind {
            NodeKind::Sequence(c) | NodeKind::Selector(c) => c,
            _ => &[],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            NodeKind::Sequence(_) => "sequence",
            NodeKind::Selector(_) => "selector",
            NodeKind::Condition(_) => "condition",
            NodeKind::Action(_) => "action",
        }
    }

    pub fn as_condition(&self) -> Option<&Atom> {
        match &self.kind {
            NodeKind::Condition(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_action(&self) -> Option<&ActionInstance> {
        match &self.kind {
            NodeKind::Action(a) => Some(a),
            _ => None,
        }
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Walk<'_> {
        Walk { stack: vec![self] }
    }

    pub fn find(&self, id: &NodeId) -> Option<&BtNode> {
        self.walk().find(|n| &n.id == id)
    }

    /// Chain of nodes from `self` down to the node with `id`, inclusive.
    pub fn path_to(&self, id: &NodeId) -> Option<Vec<&BtNode>> {
        if &self.id == id {
            return Some(vec![self]);
        }
        for c in self.children() {
            if let Some(mut p) = c.path_to(id) {
                p.insert(0, self);
                return Some(p);
            }
        }
        None
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.find(id).is_some()
    }

    /// Checks that composites have children and ids are unique.
    pub fn check(&self) -> Result<(), BtError> {
        let mut ids = BTreeSet::new();
        for n in self.walk() {
            if !ids.insert(&n.id) {
                return Err(BtError::MalformedTree(format!(
                    "duplicate node id `{}`",
                    n.id
                )));
            }
            if matches!(n.kind, NodeKind::Sequence(_) | NodeKind::Selector(_))
                && n.children().is_empty()
            {
                return Err(BtError::MalformedTree(format!(
                    "{} `{}` has no children",
                    n.kind_name(),
                    n.id
                )));
            }
        }
        Ok(())
    }
}

pub struct Walk<'a> {
    stack: Vec<&'a BtNode>,
}

impl<'a> Iterator for Walk<'a> {
    type Item = &'a BtNode;

    fn next(&mut self) -> Option<Self::Item> {
        let n = self.stack.pop()?;
        self.stack.extend(n.children().iter().rev());
        Some(n)
    }
}

/// Where a tree came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Generated,
    Replanned,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeMeta {
    /// Index of the subtask the tree realizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<usize>,
    /// Goal relation the tree establishes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Atom>,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorTree {
    pub root: BtNode,
    pub meta: TreeMeta,
}

impl BehaviorTree {
    pub fn new(root: BtNode) -> Self {
        Self {
            root,
            meta: TreeMeta::default(),
        }
    }

    pub fn with_meta(root: BtNode, meta: TreeMeta) -> Self {
        Self { root, meta }
    }

    pub fn check(&self) -> Result<(), BtError> {
        self.root.check()
    }
}
