//! Runtime maintenance of the believed state from perception reports.

use serde::{Deserialize, Serialize};

use crate::atom::{ActionInstance, Atom};

use super::perception::{M1Report, M2Report};
use super::state::{AtomDelta, WorldState, POSE_KNOWN};

/// Discrepancy thresholds in workcell length units (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Position change that counts as a discrepancy for tracking and for
    /// relative displacement of related objects.
    pub position_threshold: f64,
    /// Pose change that counts as unexpected motion of an in-action object.
    pub pose_threshold: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            position_threshold: 0.02,
            pose_threshold: 0.005,
        }
    }
}

/// Applies the three maintenance rules and returns the new state together
/// with the atom delta.
///
/// 1. Relation validity: a relation whose objects moved relative to each
///    other since they were last recorded is removed.
/// 2. Position invariance: objects outside the current action get their
///    recorded position (and pose record, if any) refreshed on discrepancy.
/// 3. Pose consistency: an in-action object whose estimated pose departs from
///    the recorded one loses `pose_is_known`; the estimate becomes its
///    recorded position until the pose is retrieved again.
///
/// Relations are evaluated against positions from before rule 2 runs, so a
/// single displacement is seen by both rules. Nothing is ever added to `R`.
pub fn update_state(
    prev: &WorldState,
    current: Option<&ActionInstance>,
    m1: &M1Report,
    m2: &M2Report,
    cfg: &UpdateConfig,
) -> (WorldState, AtomDelta) {
    let mut next = prev.clone();
    let mut delta = AtomDelta::default();
    let in_action = |o| current.is_some_and(|a| a.involves(o));

    // relation validity
    let broken: Vec<Atom> = prev
        .relations()
        .iter()
        .filter(|r| {
            let (a, b) = (&r.args[0], &r.args[1]);
            match (
                m1.position(a),
                m1.position(b),
                prev.position(a),
                prev.position(b),
            ) {
                (Some(ma), Some(mb), Some(pa), Some(pb)) => {
                    let dx = (ma.x - mb.x) - (pa.x - pb.x);
                    let dy = (ma.y - mb.y) - (pa.y - pb.y);
                    dx.hypot(dy) > cfg.position_threshold
                }
                _ => false,
            }
        })
        .cloned()
        .collect();
    for r in broken {
        next.remove_atom(&r);
        delta.removed.insert(r);
    }

    // position invariance
    for o in prev.objects() {
        if in_action(o) {
            continue;
        }
        let Some(seen) = m1.position(o) else { continue };
        let moved = prev
            .position(o)
            .is_none_or(|p| p.dist(&seen) > cfg.position_threshold);
        if moved {
            next.set_position(o, seen);
            if let Some(pose) = prev.pose(o) {
                next.set_pose(o, super::Pose::new(seen.x, seen.y, pose.yaw));
            }
        }
    }

    // pose consistency
    if let Some(action) = current {
        for o in &action.args {
            let Some(entry) = m2.entries.get(o) else {
                continue;
            };
            let Some(recorded) = prev.pose(o) else {
                continue;
            };
            if recorded.translation_dist(&entry.pose) > cfg.pose_threshold {
                let atom = Atom::unary(POSE_KNOWN, o.clone());
                next.remove_atom(&atom);
                next.set_position(o, entry.pose.position());
                delta.removed.insert(atom);
            }
        }
    }

    (next, delta)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::atom::ObjectId;
    use crate::world::{Domain, M1Entry, M2Entry, Pose, Position};

    fn obj(s: &str) -> ObjectId {
        ObjectId::from(s)
    }

    fn base_state() -> WorldState {
        let objs = ["gripper", "shaft2", "compound_gear", "gear3"].map(obj);
        let mut tools = BTreeMap::new();
        tools.insert(obj("gripper"), vec![]);
        let mut s = WorldState::empty(Arc::new(Domain::gearset()), objs, tools);
        s.set_position(&obj("gripper"), Position::new(0.0, 0.0));
        s.set_position(&obj("shaft2"), Position::new(0.3, 0.2));
        s.set_position(&obj("compound_gear"), Position::new(0.3, 0.2));
        s.set_position(&obj("gear3"), Position::new(0.5, 0.1));
        s.insert_atom(
            Atom::binary("is_inserted_to", "compound_gear", "shaft2"),
            &[],
        );
        s.insert_atom(Atom::unary("pose_is_known", "gear3"), &[]);
        s
    }

    fn m1_of(s: &WorldState) -> M1Report {
        M1Report {
            entries: s
                .positions()
                .iter()
                .map(|(o, p)| {
                    (
                        o.clone(),
                        M1Entry {
                            position: Some(*p),
                            ..Default::default()
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn matching_reports_are_a_fixed_point() {
        let s = base_state();
        let pick = crate::atom::ActionInstance::new("pick_up", ["gripper", "gear3"]);
        let mut m2 = M2Report::default();
        m2.entries.insert(
            obj("gear3"),
            M2Entry {
                pose: s.pose(&obj("gear3")).unwrap(),
                deviation: 0.0,
            },
        );
        let (next, delta) =
            update_state(&s, Some(&pick), &m1_of(&s), &m2, &UpdateConfig::default());
        assert_eq!(next, s);
        assert!(delta.is_empty());
    }

    #[test]
    fn extraction_breaks_the_relation() {
        let s = base_state();
        let mut m1 = m1_of(&s);
        m1.entries.get_mut(&obj("compound_gear")).unwrap().position =
            Some(Position::new(0.45, 0.35));
        let (next, delta) = update_state(
            &s,
            None,
            &m1,
            &M2Report::default(),
            &UpdateConfig::default(),
        );
        let r = Atom::binary("is_inserted_to", "compound_gear", "shaft2");
        assert!(!next.holds(&r).unwrap());
        assert_eq!(delta.removed.into_iter().collect::<Vec<_>>(), [r]);
        assert_eq!(
            next.position(&obj("compound_gear")),
            Some(Position::new(0.45, 0.35))
        );
    }

    #[test]
    fn moving_related_objects_together_keeps_the_relation() {
        let s = base_state();
        let mut m1 = m1_of(&s);
        for o in ["shaft2", "compound_gear"] {
            let e = m1.entries.get_mut(&obj(o)).unwrap();
            let p = e.position.unwrap();
            e.position = Some(Position::new(p.x + 0.1, p.y));
        }
        let (next, delta) = update_state(
            &s,
            None,
            &m1,
            &M2Report::default(),
            &UpdateConfig::default(),
        );
        assert!(delta.is_empty());
        assert_eq!(next.position(&obj("shaft2")), Some(Position::new(0.4, 0.2)));
    }

    #[test]
    fn in_action_displacement_drops_pose() {
        let s = base_state();
        let pick = crate::atom::ActionInstance::new("pick_up", ["gripper", "gear3"]);
        let mut m1 = m1_of(&s);
        m1.entries.get_mut(&obj("gear3")).unwrap().position = Some(Position::new(0.6, 0.1));
        let mut m2 = M2Report::default();
        m2.entries.insert(
            obj("gear3"),
            M2Entry {
                pose: Pose::new(0.6, 0.1, 0.0),
                deviation: 0.0,
            },
        );
        let (next, delta) = update_state(&s, Some(&pick), &m1, &m2, &UpdateConfig::default());
        let known = Atom::unary("pose_is_known", "gear3");
        assert!(!next.holds(&known).unwrap());
        assert_eq!(next.pose(&obj("gear3")), None);
        assert_eq!(delta.removed.into_iter().collect::<Vec<_>>(), [known]);
        assert!(delta.added.is_empty());
    }

    #[test]
    fn lost_tracks_do_not_trigger_rules() {
        let s = base_state();
        let mut m1 = m1_of(&s);
        *m1.entries.get_mut(&obj("compound_gear")).unwrap() = M1Entry {
            position: None,
            lost: true,
            misassigned: false,
        };
        let (next, delta) = update_state(
            &s,
            None,
            &m1,
            &M2Report::default(),
            &UpdateConfig::default(),
        );
        assert!(delta.is_empty());
        assert_eq!(next, s);
    }
}
