//! Domain vocabulary: predicate symbols, action schemas and skills.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::atom::{ActionInstance, Atom, ObjectId};

use super::WorldError;

/// Which vocabulary a predicate symbol belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolClass {
    Property,
    Constraint,
    Relation,
}

impl SymbolClass {
    pub fn arity(self) -> usize {
        match self {
            SymbolClass::Property => 1,
            SymbolClass::Constraint | SymbolClass::Relation => 2,
        }
    }
}

/// Role an action parameter plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Robot,
    Tool,
    Part,
    Target,
    Object,
}

/// Atom over schema parameters; `params` index into [`ActionSchema::params`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomTemplate {
    pub pred: String,
    pub params: Vec<usize>,
}

impl AtomTemplate {
    fn new(pred: &str, params: &[usize]) -> Self {
        Self {
            pred: pred.to_owned(),
            params: params.to_vec(),
        }
    }

    pub fn ground(&self, args: &[ObjectId]) -> Atom {
        Atom {
            pred: self.pred.clone(),
            args: self.params.iter().map(|&i| args[i].clone()).collect(),
        }
    }
}

/// STRIPS-style schema for one action primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<Role>,
    pub pre: Vec<AtomTemplate>,
    pub add: Vec<AtomTemplate>,
    pub del: Vec<AtomTemplate>,
    /// Nominal duration in ticks.
    pub duration: u32,
    /// Effects come from the tool capability table instead of `add`/`del`.
    #[serde(default)]
    pub tool_change: bool,
}

impl ActionSchema {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn index_of(&self, role: Role) -> Option<usize> {
        self.params.iter().position(|r| *r == role)
    }
}

/// Binds a skill symbol to the action that realizes it, the constraint that
/// licenses it and the relation it establishes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillBinding {
    pub action: String,
    pub constraint: String,
    pub relation: String,
}

/// The domain `(P, C, R, A, S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub properties: BTreeSet<String>,
    pub constraints: BTreeSet<String>,
    pub relations: BTreeSet<String>,
    pub actions: BTreeMap<String, ActionSchema>,
    pub skills: BTreeMap<String, SkillBinding>,
    /// Constraint symbol whose instances change with the mounted tool.
    pub capability: Option<String>,
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

impl Domain {
    /// The gearset assembly domain.
    pub fn gearset() -> Self {
        use Role::*;
        let t = AtomTemplate::new;
        let mut actions = BTreeMap::new();
        let mut add = |s: ActionSchema| {
            actions.insert(s.name.clone(), s);
        };
        add(ActionSchema {
            name: "change_tool".into(),
            params: vec![Robot, Tool],
            pre: vec![],
            add: vec![],
            del: vec![],
            duration: 15,
            tool_change: true,
        });
        add(ActionSchema {
            name: "pick_up".into(),
            params: vec![Tool, Part],
            pre: vec![t("is_empty", &[0]), t("pose_is_known", &[1])],
            add: vec![t("hold", &[0, 1])],
            del: vec![t("is_empty", &[0])],
            duration: 10,
            tool_change: false,
        });
        add(ActionSchema {
            name: "put_down".into(),
            params: vec![Tool, Part],
            pre: vec![t("hold", &[0, 1])],
            add: vec![t("is_empty", &[0])],
            del: vec![t("hold", &[0, 1])],
            duration: 8,
            tool_change: false,
        });
        for (name, constraint, relation, duration) in [
            ("insert", "can_insert_to", "is_inserted_to", 20),
            ("engage", "can_engage_with", "is_engaged_with", 20),
            ("place", "can_place_on", "is_placed_on", 15),
        ] {
            add(ActionSchema {
                name: name.into(),
                params: vec![Tool, Part, Target],
                pre: vec![
                    t("hold", &[0, 1]),
                    t("pose_is_known", &[2]),
                    t(constraint, &[1, 2]),
                ],
                add: vec![t(relation, &[1, 2]), t("is_empty", &[0])],
                del: vec![t("hold", &[0, 1])],
                duration,
                tool_change: false,
            });
        }
        add(ActionSchema {
            name: "retrieve_pose".into(),
            params: vec![Object],
            pre: vec![],
            add: vec![t("pose_is_known", &[0])],
            del: vec![],
            duration: 5,
            tool_change: false,
        });

        let skills = [
            ("insert", "can_insert_to", "is_inserted_to"),
            ("engage", "can_engage_with", "is_engaged_with"),
            ("place", "can_place_on", "is_placed_on"),
        ]
        .into_iter()
        .map(|(s, c, r)| {
            (
                s.to_owned(),
                SkillBinding {
                    action: s.to_owned(),
                    constraint: c.to_owned(),
                    relation: r.to_owned(),
                },
            )
        })
        .collect();

        Domain {
            properties: set(&["is_empty", "pose_is_known"]),
            constraints: set(&[
                "can_manipulate",
                "can_insert_to",
                "can_engage_with",
                "can_place_on",
            ]),
            relations: set(&["is_inserted_to", "is_engaged_with", "is_placed_on", "hold"]),
            actions,
            skills,
            capability: Some("can_manipulate".into()),
        }
    }

    pub fn classify(&self, pred: &str) -> Option<SymbolClass> {
        if self.properties.contains(pred) {
            Some(SymbolClass::Property)
        } else if self.constraints.contains(pred) {
            Some(SymbolClass::Constraint)
        } else if self.relations.contains(pred) {
            Some(SymbolClass::Relation)
        } else {
            None
        }
    }

    /// Checks that `atom` uses a declared symbol with the right arity.
    pub fn check_atom(&self, atom: &Atom) -> Result<SymbolClass, WorldError> {
        let class = self
            .classify(&atom.pred)
            .ok_or_else(|| WorldError::UnknownSymbol(atom.pred.clone()))?;
        if atom.args.len() != class.arity() {
            return Err(WorldError::ArityMismatch {
                symbol: atom.pred.clone(),
                expected: class.arity(),
                found: atom.args.len(),
            });
        }
        Ok(class)
    }

    pub fn schema(&self, name: &str) -> Result<&ActionSchema, WorldError> {
        self.actions
            .get(name)
            .ok_or_else(|| WorldError::UnknownSymbol(name.to_owned()))
    }

    /// Checks the action name and arity.
    pub fn check_action(&self, action: &ActionInstance) -> Result<&ActionSchema, WorldError> {
        let schema = self.schema(&action.name)?;
        if schema.arity() != action.args.len() {
            return Err(WorldError::ArityMismatch {
                symbol: action.name.clone(),
                expected: schema.arity(),
                found: action.args.len(),
            });
        }
        Ok(schema)
    }

    pub fn skill(&self, skill: &str) -> Result<&SkillBinding, WorldError> {
        self.skills
            .get(skill)
            .ok_or_else(|| WorldError::UnknownSymbol(skill.to_owned()))
    }

    pub fn is_capability(&self, pred: &str) -> bool {
        self.capability.as_deref() == Some(pred)
    }

    /// Verifies the structural invariants of the vocabulary.
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidDomain(m));
        for sym in &self.properties {
            if self.constraints.contains(sym) || self.relations.contains(sym) {
                return bad(format!("symbol {sym} declared in more than one vocabulary"));
            }
        }
        for sym in &self.constraints {
            if self.relations.contains(sym) {
                return bad(format!("symbol {sym} declared in more than one vocabulary"));
            }
        }
        if let Some(cap) = &self.capability {
            if !self.constraints.contains(cap) {
                return bad(format!("capability symbol {cap} is not a constraint"));
            }
        }
        for (name, schema) in &self.actions {
            if self.classify(name).is_some() {
                return bad(format!("action {name} collides with a predicate symbol"));
            }
            for tpl in schema.pre.iter().chain(&schema.add).chain(&schema.del) {
                let class = self
                    .classify(&tpl.pred)
                    .ok_or_else(|| WorldError::UnknownSymbol(tpl.pred.clone()))?;
                if tpl.params.len() != class.arity()
                    || tpl.params.iter().any(|&i| i >= schema.arity())
                {
                    return bad(format!("malformed template {} in schema {name}", tpl.pred));
                }
            }
            for tpl in schema.add.iter().chain(&schema.del) {
                if self.classify(&tpl.pred) == Some(SymbolClass::Constraint) {
                    return bad(format!(
                        "schema {name} has a constraint effect {}",
                        tpl.pred
                    ));
                }
            }
        }
        for (skill, binding) in &self.skills {
            let matching: Vec<_> = self
                .actions
                .values()
                .filter(|s| s.add.iter().any(|t| t.pred == binding.relation))
                .collect();
            if matching.len() != 1 || matching[0].name != binding.action {
                return bad(format!(
                    "skill {skill} must map to exactly one schema adding {}",
                    binding.relation
                ));
            }
            if self.classify(&binding.constraint) != Some(SymbolClass::Constraint) {
                return bad(format!(
                    "skill {skill} constraint {} undeclared",
                    binding.constraint
                ));
            }
        }
        Ok(())
    }
}

impl Default for Domain {
    fn default() -> Self {
        Self::gearset()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(s: &BTreeSet<String>) -> Vec<&str> {
        s.iter().map(String::as_str).collect()
    }

    #[test]
    fn default_vocabulary_matches_domain_table() {
        let d = Domain::gearset();
        assert_eq!(names(&d.properties), ["is_empty", "pose_is_known"]);
        assert_eq!(
            names(&d.constraints),
            [
                "can_engage_with",
                "can_insert_to",
                "can_manipulate",
                "can_place_on"
            ]
        );
        assert_eq!(
            names(&d.relations),
            ["hold", "is_engaged_with", "is_inserted_to", "is_placed_on"]
        );
        let actions: Vec<_> = d.actions.keys().map(String::as_str).collect();
        assert_eq!(
            actions,
            [
                "change_tool",
                "engage",
                "insert",
                "pick_up",
                "place",
                "put_down",
                "retrieve_pose"
            ]
        );
        let skills: Vec<_> = d.skills.keys().map(String::as_str).collect();
        assert_eq!(skills, ["engage", "insert", "place"]);
        d.validate().unwrap();
    }

    #[test]
    fn overlapping_vocabularies_are_rejected() {
        let mut d = Domain::gearset();
        d.relations.insert("is_empty".into());
        assert!(matches!(d.validate(), Err(WorldError::InvalidDomain(_))));
    }

    #[test]
    fn constraint_effects_are_rejected() {
        let mut d = Domain::gearset();
        d.actions
            .get_mut("insert")
            .unwrap()
            .add
            .push(AtomTemplate::new("can_insert_to", &[1, 2]));
        assert!(d.validate().is_err());
    }

    #[test]
    fn arity_is_checked() {
        let d = Domain::gearset();
        assert!(d.check_atom(&Atom::unary("hold", "gear1")).is_err());
        assert!(d.check_atom(&Atom::unary("bogus", "gear1")).is_err());
        assert_eq!(
            d.check_atom(&Atom::binary("hold", "gripper", "gear1"))
                .unwrap(),
            SymbolClass::Relation
        );
    }
}
