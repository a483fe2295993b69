use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::atom::{ActionInstance, Atom, ObjectId};

use super::domain::{Domain, SymbolClass};
use super::WorldError;

/// Coarse planar position as tracked by whole-scene perception.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Planar pose `(x, y, yaw)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> Position {
        Position::new(self.x, self.y)
    }

    pub fn translation_dist(&self, other: &Pose) -> f64 {
        self.position().dist(&other.position())
    }
}

/// Static inter-object constraints, fixed once interpretation is done.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintSet(BTreeSet<Atom>);

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.0.contains(atom)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn insert(&mut self, atom: Atom) -> bool {
        self.0.insert(atom)
    }
}

impl FromIterator<Atom> for ConstraintSet {
    fn from_iter<T: IntoIterator<Item = Atom>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Atoms added and removed between two states.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AtomDelta {
    pub added: BTreeSet<Atom>,
    pub removed: BTreeSet<Atom>,
}

impl AtomDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    /// Folds `later` into `self` as if applied afterwards.
    pub fn merge(&mut self, later: AtomDelta) {
        for a in later.removed {
            if !self.added.remove(&a) {
                self.removed.insert(a);
            }
        }
        for a in later.added {
            if !self.removed.remove(&a) {
                self.added.insert(a);
            }
        }
    }
}

/// Grounded preconditions and effects of one action instance in a state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundEffects {
    pub pre: Vec<Atom>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
}

/// The believed world state `(P, R)` plus the perception records that back it.
#[derive(Debug, Clone)]
pub struct WorldState {
    domain: Arc<Domain>,
    objects: BTreeSet<ObjectId>,
    tools: BTreeMap<ObjectId, Vec<ObjectId>>,
    properties: BTreeSet<Atom>,
    relations: BTreeSet<Atom>,
    capabilities: BTreeSet<Atom>,
    constraints: ConstraintSet,
    positions: BTreeMap<ObjectId, Position>,
    poses: BTreeMap<ObjectId, Pose>,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        *self.domain == *other.domain
            && self.objects == other.objects
            && self.tools == other.tools
            && self.properties == other.properties
            && self.relations == other.relations
            && self.capabilities == other.capabilities
            && self.constraints == other.constraints
            && self.positions == other.positions
            && self.poses == other.poses
    }
}

impl Serialize for WorldState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("WorldState", 6)?;
        st.serialize_field("properties", &self.properties)?;
        st.serialize_field("relations", &self.relations)?;
        st.serialize_field("capabilities", &self.capabilities)?;
        st.serialize_field("constraints", &self.constraints)?;
        st.serialize_field("positions", &self.positions)?;
        st.serialize_field("poses", &self.poses)?;
        st.end()
    }
}

impl WorldState {
    /// An empty state over `objects`; `tools` maps each tool to the objects
    /// it can manipulate.
    pub fn empty(
        domain: Arc<Domain>,
        objects: impl IntoIterator<Item = ObjectId>,
        tools: BTreeMap<ObjectId, Vec<ObjectId>>,
    ) -> Self {
        Self {
            domain,
            objects: objects.into_iter().collect(),
            tools,
            properties: BTreeSet::new(),
            relations: BTreeSet::new(),
            capabilities: BTreeSet::new(),
            constraints: ConstraintSet::new(),
            positions: BTreeMap::new(),
            poses: BTreeMap::new(),
        }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn objects(&self) -> &BTreeSet<ObjectId> {
        &self.objects
    }

    pub fn tools(&self) -> &BTreeMap<ObjectId, Vec<ObjectId>> {
        &self.tools
    }

    pub fn is_tool(&self, o: &ObjectId) -> bool {
        self.tools.contains_key(o)
    }

    pub fn properties(&self) -> &BTreeSet<Atom> {
        &self.properties
    }

    pub fn relations(&self) -> &BTreeSet<Atom> {
        &self.relations
    }

    pub fn capabilities(&self) -> &BTreeSet<Atom> {
        &self.capabilities
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn positions(&self) -> &BTreeMap<ObjectId, Position> {
        &self.positions
    }

    pub fn position(&self, o: &ObjectId) -> Option<Position> {
        self.positions.get(o).copied()
    }

    pub fn poses(&self) -> &BTreeMap<ObjectId, Pose> {
        &self.poses
    }

    pub fn pose(&self, o: &ObjectId) -> Option<Pose> {
        self.poses.get(o).copied()
    }

    /// Every mutable atom: properties, relations and tool capabilities.
    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.properties
            .iter()
            .chain(&self.relations)
            .chain(&self.capabilities)
    }

    fn check_objects(&self, atom: &Atom) -> Result<(), WorldError> {
        match atom.args.iter().find(|a| !self.objects.contains(*a)) {
            Some(o) => Err(WorldError::UnknownObject(o.clone())),
            None => Ok(()),
        }
    }

    /// Validates symbol, arity and objects of `atom`.
    pub fn check_atom(&self, atom: &Atom) -> Result<SymbolClass, WorldError> {
        let class = self.domain.check_atom(atom)?;
        self.check_objects(atom)?;
        Ok(class)
    }

    /// Truth of `atom`: set membership for properties and relations, the
    /// constraint set (or tool capabilities) for constraints.
    pub fn holds(&self, atom: &Atom) -> Result<bool, WorldError> {
        Ok(match self.check_atom(atom)? {
            SymbolClass::Property => self.properties.contains(atom),
            SymbolClass::Relation => self.relations.contains(atom),
            SymbolClass::Constraint if self.domain.is_capability(&atom.pred) => {
                self.capabilities.contains(atom)
            }
            SymbolClass::Constraint => self.constraints.contains(atom),
        })
    }

    /// Grounds the schema of `action` in this state.
    pub fn effects_of(&self, action: &ActionInstance) -> Result<GroundEffects, WorldError> {
        let schema = self.domain.check_action(action)?;
        if let Some(o) = action.args.iter().find(|a| !self.objects.contains(*a)) {
            return Err(WorldError::UnknownObject(o.clone()));
        }
        let ground = |v: &Vec<super::AtomTemplate>| -> Vec<Atom> {
            v.iter().map(|t| t.ground(&action.args)).collect()
        };
        let mut fx = GroundEffects {
            pre: ground(&schema.pre),
            add: ground(&schema.add),
            del: ground(&schema.del),
        };
        if schema.tool_change {
            let cap = self.domain.capability.clone().ok_or_else(|| {
                WorldError::InvalidDomain("tool change without capability symbol".into())
            })?;
            let tool = &action.args[schema
                .index_of(super::Role::Tool)
                .unwrap_or(action.args.len() - 1)];
            let targets = self
                .tools
                .get(tool)
                .ok_or_else(|| WorldError::UnknownObject(tool.clone()))?;
            fx.add = targets
                .iter()
                .map(|o| Atom::binary(cap.clone(), tool.clone(), o.clone()))
                .collect();
            fx.del = self
                .capabilities
                .iter()
                .filter(|a| !fx.add.contains(a))
                .cloned()
                .collect();
        }
        Ok(fx)
    }

    /// The atom an action unit for `action` targets: its first add-effect.
    pub fn primary_effect(&self, action: &ActionInstance) -> Result<Option<Atom>, WorldError> {
        Ok(self.effects_of(action)?.add.into_iter().next())
    }

    /// Applies `action` after checking its preconditions. Only the declared
    /// add/delete atoms change.
    pub fn apply_effects(&self, action: &ActionInstance) -> Result<WorldState, WorldError> {
        let fx = self.effects_of(action)?;
        for atom in &fx.pre {
            if !self.holds(atom)? {
                return Err(WorldError::PreconditionUnsatisfied {
                    action: action.clone(),
                    atom: atom.clone(),
                });
            }
        }
        let mut next = self.clone();
        next.apply_ground(&fx, &[]);
        Ok(next)
    }

    /// Applies a physically completed action without re-checking
    /// preconditions. `observed` carries poses measured during the action.
    pub fn apply_outcome(
        &mut self,
        action: &ActionInstance,
        observed: &[(ObjectId, Pose)],
    ) -> Result<AtomDelta, WorldError> {
        let fx = self.effects_of(action)?;
        Ok(self.apply_ground(&fx, observed))
    }

    fn apply_ground(&mut self, fx: &GroundEffects, observed: &[(ObjectId, Pose)]) -> AtomDelta {
        let mut delta = AtomDelta::default();
        for atom in &fx.del {
            if self.remove_atom(atom) {
                delta.removed.insert(atom.clone());
            }
        }
        for atom in &fx.add {
            if self.insert_atom(atom.clone(), observed) {
                delta.added.insert(atom.clone());
            }
        }
        delta
    }

    fn set_for(&mut self, atom: &Atom) -> &mut BTreeSet<Atom> {
        match self.domain.classify(&atom.pred) {
            Some(SymbolClass::Property) => &mut self.properties,
            Some(SymbolClass::Relation) => &mut self.relations,
            _ => &mut self.capabilities,
        }
    }

    pub(crate) fn insert_atom(&mut self, atom: Atom, observed: &[(ObjectId, Pose)]) -> bool {
        if atom.pred == POSE_KNOWN {
            let o = atom.args[0].clone();
            let pose = observed
                .iter()
                .find(|(id, _)| *id == o)
                .map(|(_, p)| *p)
                .or_else(|| self.poses.get(&o).copied())
                .or_else(|| self.positions.get(&o).map(|p| Pose::new(p.x, p.y, 0.0)))
                .unwrap_or_default();
            if observed.iter().any(|(id, _)| *id == o) {
                self.positions.insert(o.clone(), pose.position());
            }
            self.poses.insert(o, pose);
        }
        self.set_for(&atom).insert(atom)
    }

    pub(crate) fn remove_atom(&mut self, atom: &Atom) -> bool {
        if atom.pred == POSE_KNOWN {
            self.poses.remove(&atom.args[0]);
        }
        self.set_for(atom).remove(atom)
    }

    pub(crate) fn set_position(&mut self, o: &ObjectId, p: Position) {
        self.positions.insert(o.clone(), p);
    }

    pub(crate) fn set_pose(&mut self, o: &ObjectId, pose: Pose) {
        if self.poses.contains_key(o) {
            self.poses.insert(o.clone(), pose);
        }
    }

    pub(crate) fn add_constraint(&mut self, atom: Atom) -> Result<bool, WorldError> {
        if self.check_atom(&atom)? != SymbolClass::Constraint {
            return Err(WorldError::UnknownSymbol(format!(
                "{} is not a constraint",
                atom.pred
            )));
        }
        if self.domain.is_capability(&atom.pred) {
            Ok(self.capabilities.insert(atom))
        } else {
            Ok(self.constraints.insert(atom))
        }
    }

    /// Returns a copy with `extra` merged into the constraint set.
    pub fn with_constraints<'a>(
        &self,
        extra: impl IntoIterator<Item = &'a Atom>,
    ) -> Result<WorldState, WorldError> {
        let mut next = self.clone();
        for a in extra {
            next.add_constraint(a.clone())?;
        }
        Ok(next)
    }
}

pub(crate) const POSE_KNOWN: &str = "pose_is_known";

/// Symmetric difference of the mutable atoms of `a` and `b`, from `a` to `b`.
pub fn diff(a: &WorldState, b: &WorldState) -> Result<AtomDelta, WorldError> {
    if *a.domain != *b.domain {
        return Err(WorldError::DomainMismatch);
    }
    let before: BTreeSet<&Atom> = a.atoms().collect();
    let after: BTreeSet<&Atom> = b.atoms().collect();
    Ok(AtomDelta {
        added: after.difference(&before).map(|a| (*a).clone()).collect(),
        removed: before.difference(&after).map(|a| (*a).clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> WorldState {
        let objs = ["gripper", "gear1", "shaft1"].map(ObjectId::from);
        let mut tools = BTreeMap::new();
        tools.insert(ObjectId::from("gripper"), vec![ObjectId::from("gear1")]);
        let mut s = WorldState::empty(Arc::new(Domain::gearset()), objs, tools);
        s.insert_atom(Atom::unary("is_empty", "gripper"), &[]);
        s.add_constraint(Atom::binary("can_insert_to", "gear1", "shaft1"))
            .unwrap();
        s
    }

    #[test]
    fn removed_relation_no_longer_holds() {
        let mut s = state();
        let r = Atom::binary("hold", "gripper", "gear1");
        s.insert_atom(r.clone(), &[]);
        assert!(s.holds(&r).unwrap());
        s.remove_atom(&r);
        assert!(!s.holds(&r).unwrap());
    }

    #[test]
    fn pick_up_requires_empty_gripper() {
        let s = state();
        let s = s
            .apply_effects(&ActionInstance::new("retrieve_pose", ["gear1"]))
            .unwrap();
        let s = s
            .apply_effects(&ActionInstance::new("pick_up", ["gripper", "gear1"]))
            .unwrap();
        let err = s
            .apply_effects(&ActionInstance::new("pick_up", ["gripper", "gear1"]))
            .unwrap_err();
        assert_eq!(
            err,
            WorldError::PreconditionUnsatisfied {
                action: ActionInstance::new("pick_up", ["gripper", "gear1"]),
                atom: Atom::unary("is_empty", "gripper"),
            }
        );
    }

    #[test]
    fn pose_record_follows_pose_property() {
        let mut s = state();
        s.set_position(&"gear1".into(), Position::new(0.3, 0.1));
        let s2 = s
            .apply_effects(&ActionInstance::new("retrieve_pose", ["gear1"]))
            .unwrap();
        assert_eq!(s2.pose(&"gear1".into()), Some(Pose::new(0.3, 0.1, 0.0)));
        let mut s3 = s2.clone();
        s3.remove_atom(&Atom::unary("pose_is_known", "gear1"));
        assert_eq!(s3.pose(&"gear1".into()), None);
    }

    #[test]
    fn change_tool_swaps_capabilities() {
        let mut s = state();
        let mut tools = s.tools.clone();
        tools.insert("pincer".into(), vec!["shaft1".into()]);
        s.tools = tools;
        s.objects.insert("pincer".into());
        s.objects.insert("robot".into());
        let s = s
            .apply_effects(&ActionInstance::new("change_tool", ["robot", "gripper"]))
            .unwrap();
        assert!(s
            .holds(&Atom::binary("can_manipulate", "gripper", "gear1"))
            .unwrap());
        let s2 = s
            .apply_effects(&ActionInstance::new("change_tool", ["robot", "pincer"]))
            .unwrap();
        let d = diff(&s, &s2).unwrap();
        assert_eq!(
            d.added.into_iter().collect::<Vec<_>>(),
            [Atom::binary("can_manipulate", "pincer", "shaft1")]
        );
        assert_eq!(
            d.removed.into_iter().collect::<Vec<_>>(),
            [Atom::binary("can_manipulate", "gripper", "gear1")]
        );
    }

    #[test]
    fn diff_rejects_other_domains() {
        let a = state();
        let mut d = Domain::gearset();
        d.properties.insert("is_hot".into());
        let b = WorldState::empty(Arc::new(d), [], BTreeMap::new());
        assert_eq!(diff(&a, &b), Err(WorldError::DomainMismatch));
    }

    #[test]
    fn delta_merge_cancels() {
        let a = Atom::unary("is_empty", "gripper");
        let mut d = AtomDelta::default();
        d.removed.insert(a.clone());
        let mut later = AtomDelta::default();
        later.added.insert(a);
        d.merge(later);
        assert!(d.is_empty());
    }
}
