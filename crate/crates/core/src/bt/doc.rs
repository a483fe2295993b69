//! JSON documents for trees.
//!
//! ```json
//! {"kind": "selector", "id": "u",
//!  "children": [
//!    {"kind": "condition", "id": "u.t", "atom": {"pred": "pose_is_known", "args": ["gear3"]}},
//!    {"kind": "action", "id": "u.a", "action": {"name": "retrieve_pose", "args": ["gear3"]}}]}
//! ```
//!
//! A tree document is either a bare node or `{"root": node, "meta": {...}}`.

use std::collections::BTreeSet;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::atom::{ActionInstance, Atom};
use crate::world::Domain;

use super::node::{BehaviorTree, BtNode, NodeId, NodeKind, TreeMeta};
use super::BtError;

/// One problem found in a tree document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl From<Violation> for BtError {
    fn from(v: Violation) -> Self {
        BtError::SchemaViolation {
            path: v.path,
            message: v.message,
        }
    }
}

fn node_value(n: &BtNode) -> Value {
    match &n.kind {
        NodeKind::Sequence(c) | NodeKind::Selector(c) => json!({
            "kind": n.kind_name(),
            "id": n.id,
            "children": c.iter().map(node_value).collect::<Vec<_>>(),
        }),
        NodeKind::Condition(a) => json!({"kind": "condition", "id": n.id, "atom": a}),
        NodeKind::Action(a) => json!({"kind": "action", "id": n.id, "action": a}),
    }
}

/// Serializes a tree with its metadata envelope.
pub fn to_document(tree: &BehaviorTree) -> Value {
    json!({"root": node_value(&tree.root), "meta": tree.meta})
}

/// Parses and structurally checks a tree document. Symbols are not checked
/// against a domain here; see [`validate_document`].
pub fn from_document(doc: &Value) -> Result<BehaviorTree, BtError> {
    let mut out = Vec::new();
    let tree = parse_tree(doc, &mut out);
    if let Some(v) = out.into_iter().next() {
        return Err(v.into());
    }
    tree.ok_or_else(|| BtError::MalformedTree("empty document".into()))
}

/// Collects every violation in `doc`. With a domain, atoms and actions are
/// also checked for declared symbols and arity.
pub fn validate_document(doc: &Value, domain: Option<&Domain>) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(tree) = parse_tree(doc, &mut out) else {
        return out;
    };
    if !out.is_empty() {
        return out;
    }
    check_units(&tree.root, "root", None, &mut out);
    if let Some(domain) = domain {
        check_symbols(&tree.root, "root", domain, &mut out);
    }
    out
}

fn parse_tree(doc: &Value, out: &mut Vec<Violation>) -> Option<BehaviorTree> {
    let (root, meta) = match doc.as_object() {
        Some(obj) if obj.contains_key("root") => {
            let meta = match obj.get("meta") {
                None | Some(Value::Null) => TreeMeta::default(),
                Some(m) => match TreeMeta::deserialize(m) {
                    Ok(m) => m,
                    Err(e) => {
                        out.push(violation("meta", e.to_string()));
                        TreeMeta::default()
                    }
                },
            };
            (&obj["root"], meta)
        }
        _ => (doc, TreeMeta::default()),
    };
    let mut ids = BTreeSet::new();
    let root = parse_node(root, "root", &mut ids, out)?;
    Some(BehaviorTree::with_meta(root, meta))
}

fn violation(path: &str, message: impl Into<String>) -> Violation {
    Violation {
        path: path.to_owned(),
        message: message.into(),
    }
}

fn parse_node(
    v: &Value,
    path: &str,
    ids: &mut BTreeSet<String>,
    out: &mut Vec<Violation>,
) -> Option<BtNode> {
    let Some(obj) = v.as_object() else {
        out.push(violation(path, "node must be an object"));
        return None;
    };
    let Some(kind) = obj.get("kind").and_then(Value::as_str) else {
        out.push(violation(path, "missing string field `kind`"));
        return None;
    };
    let id = match obj.get("id").and_then(Value::as_str) {
        Some(id) => id.to_owned(),
        None => {
            out.push(violation(path, "missing string field `id`"));
            return None;
        }
    };
    if !ids.insert(id.clone()) {
        out.push(violation(path, format!("duplicate node id `{id}`")));
    }
    let allowed: &[&str] = match kind {
        "sequence" | "selector" => &["kind", "id", "children"],
        "condition" => &["kind", "id", "atom"],
        "action" => &["kind", "id", "action"],
        other => {
            out.push(violation(path, format!("unknown node kind `{other}`")));
            return None;
        }
    };
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        out.push(violation(
            path,
            format!("field `{k}` is not allowed on a {kind} node"),
        ));
    }
    let id = NodeId::new(id);
    match kind {
        "sequence" | "selector" => {
            let children = match obj.get("children").and_then(Value::as_array) {
                Some(c) if !c.is_empty() => c,
                Some(_) => {
                    out.push(violation(
                        path,
                        format!("{kind} must have at least one child"),
                    ));
                    return None;
                }
                None => {
                    out.push(violation(
                        path,
                        format!("{kind} requires a `children` array"),
                    ));
                    return None;
                }
            };
            let mut parsed = Vec::with_capacity(children.len());
            for (i, c) in children.iter().enumerate() {
                if let Some(n) = parse_node(c, &format!("{path}/children[{i}]"), ids, out) {
                    parsed.push(n);
                }
            }
            if parsed.len() != children.len() {
                return None;
            }
            Some(if kind == "sequence" {
                BtNode::sequence(id, parsed)
            } else {
                BtNode::selector(id, parsed)
            })
        }
        "condition" => match obj.get("atom").map(Atom::deserialize) {
            Some(Ok(a)) => Some(BtNode::condition(id, a)),
            Some(Err(e)) => {
                out.push(violation(path, format!("bad atom: {e}")));
                None
            }
            None => {
                out.push(violation(path, "condition requires an `atom`"));
                None
            }
        },
        _ => match obj.get("action").map(ActionInstance::deserialize) {
            Some(Ok(a)) => Some(BtNode::action(id, a)),
            Some(Err(e)) => {
                out.push(violation(path, format!("bad action: {e}")));
                None
            }
            None => {
                out.push(violation(path, "action requires an `action`"));
                None
            }
        },
    }
}

/// Every Action must be the body of an action unit, either directly or as
/// the last child of its guarded Sequence.
fn check_units(
    n: &BtNode,
    path: &str,
    parent: Option<(&BtNode, Option<&BtNode>)>,
    out: &mut Vec<Violation>,
) {
    if n.as_action().is_some() {
        let ok = match parent {
            Some((p, grand)) => match &p.kind {
                NodeKind::Selector(_) => {
                    super::as_unit(p).is_some_and(|u| u.action_node.id == n.id)
                }
                NodeKind::Sequence(_) => grand
                    .and_then(super::as_unit)
                    .is_some_and(|u| u.action_node.id == n.id),
                _ => false,
            },
            None => false,
        };
        if !ok {
            out.push(violation(
                path,
                format!("action `{}` is not inside an action unit", n.id),
            ));
        }
    }
    let grand = parent.map(|(p, _)| p);
    for (i, c) in n.children().iter().enumerate() {
        check_units(c, &format!("{path}/children[{i}]"), Some((n, grand)), out);
    }
}

fn check_symbols(n: &BtNode, path: &str, domain: &Domain, out: &mut Vec<Violation>) {
    match &n.kind {
        NodeKind::Condition(a) => {
            if let Err(e) = domain.check_atom(a) {
                out.push(violation(path, e.to_string()));
            }
        }
        NodeKind::Action(a) => {
            if let Err(e) = domain.check_action(a) {
                out.push(violation(path, e.to_string()));
            }
        }
        _ => {}
    }
    for (i, c) in n.children().iter().enumerate() {
        check_symbols(c, &format!("{path}/children[{i}]"), domain, out);
    }
}

impl Serialize for BtNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        node_value(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for BtNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        let mut out = Vec::new();
        let node = parse_node(&v, "root", &mut BTreeSet::new(), &mut out);
        match (node, out.into_iter().next()) {
            (Some(n), None) => Ok(n),
            (_, Some(v)) => Err(de::Error::custom(format!("{}: {}", v.path, v.message))),
            (None, None) => Err(de::Error::custom("invalid node")),
        }
    }
}

impl Serialize for BehaviorTree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        to_document(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for BehaviorTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        from_document(&v).map_err(de::Error::custom)
    }
}
