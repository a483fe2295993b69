use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::atom::{Atom, ObjectId};

use super::domain::{Domain, SymbolClass};
use super::state::{ConstraintSet, WorldState};
use super::WorldError;

/// Setup document: objects, initial atoms and tool capabilities.
///
/// ```json
/// {"objects": ["gripper", "gear1"],
///  "properties": ["is_empty(gripper)"],
///  "relations": [],
///  "constraints": [],
///  "tool_capabilities": {"gripper": ["gear1"]}}
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupDoc {
    #[serde(default)]
    pub objects: Vec<ObjectId>,
    #[serde(default)]
    pub properties: Vec<Atom>,
    #[serde(default)]
    pub relations: Vec<Atom>,
    #[serde(default)]
    pub constraints: Vec<Atom>,
    #[serde(default)]
    pub tool_capabilities: BTreeMap<ObjectId, Vec<ObjectId>>,
}

impl SetupDoc {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Builds the initial believed state from a setup document. The constraint
/// set is returned alongside and also installed in the state.
pub fn init_state(
    doc: &SetupDoc,
    domain: Arc<Domain>,
) -> Result<(WorldState, ConstraintSet), WorldError> {
    let mut seen = BTreeSet::new();
    for (i, o) in doc.objects.iter().enumerate() {
        if !seen.insert(o.clone()) {
            return Err(WorldError::DuplicateObject(o.clone()).at(format!("objects[{i}]")));
        }
    }
    for (tool, targets) in &doc.tool_capabilities {
        let path = format!("tool_capabilities.{tool}");
        if !seen.contains(tool) {
            return Err(WorldError::UnknownObject(tool.clone()).at(path));
        }
        if let Some(o) = targets.iter().find(|o| !seen.contains(*o)) {
            return Err(WorldError::UnknownObject(o.clone()).at(path));
        }
    }

    let mut state = WorldState::empty(domain, seen, doc.tool_capabilities.clone());
    let sections = [
        ("properties", &doc.properties, SymbolClass::Property),
        ("relations", &doc.relations, SymbolClass::Relation),
    ];
    for (name, atoms, expected) in sections {
        for (i, atom) in atoms.iter().enumerate() {
            let path = format!("{name}[{i}]");
            let class = state.check_atom(atom).map_err(|e| e.at(&path))?;
            if class != expected {
                return Err(WorldError::UnknownSymbol(atom.pred.clone()).at(path));
            }
            if !state.insert_atom(atom.clone(), &[]) {
                return Err(WorldError::DuplicateAtom(atom.clone()).at(path));
            }
        }
    }
    let mut constraints = ConstraintSet::new();
    for (i, atom) in doc.constraints.iter().enumerate() {
        let path = format!("constraints[{i}]");
        if !state
            .add_constraint(atom.clone())
            .map_err(|e| e.at(&path))?
        {
            return Err(WorldError::DuplicateAtom(atom.clone()).at(path));
        }
        constraints.insert(atom.clone());
    }
    Ok((state, constraints))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> Arc<Domain> {
        Arc::new(Domain::gearset())
    }

    #[test]
    fn empty_object_list_is_valid() {
        let (s, c) = init_state(&SetupDoc::default(), domain()).unwrap();
        assert!(s.objects().is_empty());
        assert_eq!(s.atoms().count(), 0);
        assert!(c.is_empty());
    }

    #[test]
    fn unknown_object_is_rejected_with_path() {
        let doc: SetupDoc = serde_json::from_str(
            r#"{"objects":["gripper","gear1"],"relations":["hold(gripper, gearX)"]}"#,
        )
        .unwrap();
        let err = init_state(&doc, domain()).unwrap_err();
        assert_eq!(err.root(), &WorldError::UnknownObject("gearX".into()));
        assert!(err.to_string().starts_with("relations[0]"));
    }

    #[test]
    fn misplaced_and_duplicate_atoms() {
        let doc: SetupDoc =
            serde_json::from_str(r#"{"objects":["gripper"],"relations":["is_empty(gripper)"]}"#)
                .unwrap();
        assert!(matches!(
            init_state(&doc, domain()).unwrap_err().root(),
            WorldError::UnknownSymbol(_)
        ));
        let doc: SetupDoc = serde_json::from_str(
            r#"{"objects":["gripper"],"properties":["is_empty(gripper)","is_empty(gripper)"]}"#,
        )
        .unwrap();
        assert!(matches!(
            init_state(&doc, domain()).unwrap_err().root(),
            WorldError::DuplicateAtom(_)
        ));
    }

    #[test]
    fn unknown_symbol() {
        let doc: SetupDoc =
            serde_json::from_str(r#"{"objects":["a"],"properties":["is_hot(a)"]}"#).unwrap();
        assert_eq!(
            init_state(&doc, domain()).unwrap_err().root(),
            &WorldError::UnknownSymbol("is_hot".into())
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(SetupDoc::from_json(r#"{"objekts": []}"#).is_err());
    }
}
