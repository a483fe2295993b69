use std::collections::BTreeSet;
use std::sync::Arc;

use asmbt_core::atom::{ActionInstance, Atom, ObjectId};
use asmbt_core::world::{
    diff, init_state, update_state, Domain, M1Entry, M1Report, M2Entry, M2Report, Pose, Position,
    SetupDoc, UpdateConfig, WorldState,
};
use proptest::prelude::*;

fn atom(s: &str) -> Atom {
    Atom::parse(s).unwrap()
}

fn atoms(v: &[&str]) -> BTreeSet<Atom> {
    v.iter().map(|s| atom(s)).collect()
}

fn state(properties: &[&str], relations: &[&str], constraints: &[&str]) -> WorldState {
    let setup: SetupDoc = serde_json::from_value(serde_json::json!({
        "objects": ["robot", "gripper", "pincer", "gear1", "shaft1", "base"],
        "properties": properties,
        "relations": relations,
        "constraints": constraints,
        "tool_capabilities": {"gripper": ["gear1"], "pincer": ["shaft1"]},
    }))
    .unwrap();
    init_state(&setup, Arc::new(Domain::gearset())).unwrap().0
}

struct Case {
    action: &'static str,
    properties: &'static [&'static str],
    relations: &'static [&'static str],
    constraints: &'static [&'static str],
    added: &'static [&'static str],
    removed: &'static [&'static str],
}

/// One applicable instance per schema with its expected delta, written out
/// by hand from the action table.
const CASES: &[Case] = &[
    Case {
        action: "pick_up(gripper, gear1)",
        properties: &["is_empty(gripper)", "pose_is_known(gear1)"],
        relations: &[],
        constraints: &[],
        added: &["hold(gripper, gear1)"],
        removed: &["is_empty(gripper)"],
    },
    Case {
        action: "put_down(gripper, gear1)",
        properties: &[],
        relations: &["hold(gripper, gear1)"],
        constraints: &[],
        added: &["is_empty(gripper)"],
        removed: &["hold(gripper, gear1)"],
    },
    Case {
        action: "insert(gripper, gear1, shaft1)",
        properties: &["pose_is_known(shaft1)"],
        relations: &["hold(gripper, gear1)"],
        constraints: &["can_insert_to(gear1, shaft1)"],
        added: &["is_inserted_to(gear1, shaft1)", "is_empty(gripper)"],
        removed: &["hold(gripper, gear1)"],
    },
    Case {
        action: "engage(gripper, gear1, shaft1)",
        properties: &["pose_is_known(shaft1)"],
        relations: &["hold(gripper, gear1)"],
        constraints: &["can_engage_with(gear1, shaft1)"],
        added: &["is_engaged_with(gear1, shaft1)", "is_empty(gripper)"],
        removed: &["hold(gripper, gear1)"],
    },
    Case {
        action: "place(gripper, shaft1, base)",
        properties: &["pose_is_known(base)"],
        relations: &["hold(gripper, shaft1)"],
        constraints: &["can_place_on(shaft1, base)"],
        added: &["is_placed_on(shaft1, base)", "is_empty(gripper)"],
        removed: &["hold(gripper, shaft1)"],
    },
    Case {
        action: "retrieve_pose(gear1)",
        properties: &[],
        relations: &[],
        constraints: &[],
        added: &["pose_is_known(gear1)"],
        removed: &[],
    },
    Case {
        action: "change_tool(robot, pincer)",
        properties: &[],
        relations: &[],
        constraints: &[],
        added: &["can_manipulate(pincer, shaft1)"],
        removed: &[],
    },
];

#[test]
fn every_schema_changes_exactly_its_declared_effects() {
    let covered: BTreeSet<String> = CASES
        .iter()
        .map(|c| ActionInstance::parse(c.action).unwrap().name)
        .collect();
    let schemas: BTreeSet<String> = Domain::gearset().actions.keys().cloned().collect();
    assert_eq!(covered, schemas);
    for c in CASES {
        let s = state(c.properties, c.relations, c.constraints);
        let next = s
            .apply_effects(&ActionInstance::parse(c.action).unwrap())
            .unwrap();
        let d = diff(&s, &next).unwrap();
        assert_eq!(d.added, atoms(c.added), "{}", c.action);
        assert_eq!(d.removed, atoms(c.removed), "{}", c.action);
        assert_eq!(next.constraints(), s.constraints(), "{}", c.action);
    }
}

#[test]
fn tool_change_swaps_the_capability_set() {
    let s = state(&[], &[], &[]);
    let a = s
        .apply_effects(&ActionInstance::parse("change_tool(robot, gripper)").unwrap())
        .unwrap();
    let b = a
        .apply_effects(&ActionInstance::parse("change_tool(robot, pincer)").unwrap())
        .unwrap();
    let d = diff(&a, &b).unwrap();
    assert_eq!(d.added, atoms(&["can_manipulate(pincer, shaft1)"]));
    assert_eq!(d.removed, atoms(&["can_manipulate(gripper, gear1)"]));
}

#[test]
fn unmet_preconditions_are_refused() {
    let s = state(&["is_empty(gripper)"], &[], &[]);
    assert!(s
        .apply_effects(&ActionInstance::parse("pick_up(gripper, gear1)").unwrap())
        .is_err());
    let s = state(&["pose_is_known(shaft1)"], &["hold(gripper, gear1)"], &[]);
    assert!(s
        .apply_effects(&ActionInstance::parse("insert(gripper, gear1, shaft1)").unwrap())
        .is_err());
}

/// shaft1 on base at known positions, gear1 tracked with a known pose.
fn tracked() -> WorldState {
    let mut s = state(&["is_empty(gripper)"], &["is_placed_on(shaft1, base)"], &[]);
    let observe = |s: &mut WorldState, o: &str, x: f64, y: f64| {
        s.apply_outcome(
            &ActionInstance::new("retrieve_pose", [o]),
            &[(ObjectId::from(o), Pose::new(x, y, 0.0))],
        )
        .unwrap();
    };
    observe(&mut s, "shaft1", 0.3, 0.2);
    observe(&mut s, "base", 0.3, 0.2);
    observe(&mut s, "gear1", 0.5, 0.1);
    s
}

fn m1(s: &WorldState) -> M1Report {
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

fn moved(report: &mut M1Report, o: &str, dx: f64, dy: f64) {
    let e = report.entries.get_mut(&ObjectId::from(o)).unwrap();
    let p = e.position.unwrap();
    e.position = Some(Position::new(p.x + dx, p.y + dy));
}

#[test]
fn relation_validity_rule() {
    let s = tracked();
    let mut r = m1(&s);
    moved(&mut r, "shaft1", 0.1, 0.0);
    let (next, d) = update_state(&s, None, &r, &M2Report::default(), &UpdateConfig::default());
    assert_eq!(d.removed, atoms(&["is_placed_on(shaft1, base)"]));
    assert!(d.added.is_empty());
    assert!(next.relations().is_empty());
}

#[test]
fn position_invariance_rule() {
    let s = tracked();
    let mut r = m1(&s);
    moved(&mut r, "gear1", 0.05, 0.0);
    let (next, d) = update_state(&s, None, &r, &M2Report::default(), &UpdateConfig::default());
    assert!(d.is_empty());
    let p = next.position(&"gear1".into()).unwrap();
    assert!((p.x - 0.55).abs() < 1e-12 && (p.y - 0.1).abs() < 1e-12);
    assert!(next.holds(&atom("pose_is_known(gear1)")).unwrap());

    // below the threshold nothing changes
    let mut r = m1(&s);
    moved(&mut r, "gear1", 0.01, 0.0);
    let (next, _) = update_state(&s, None, &r, &M2Report::default(), &UpdateConfig::default());
    assert_eq!(next, s);
}

#[test]
fn pose_consistency_rule() {
    let s = tracked();
    let pick = ActionInstance::parse("pick_up(gripper, gear1)").unwrap();
    let mut m2 = M2Report::default();
    m2.entries.insert(
        "gear1".into(),
        M2Entry {
            pose: Pose::new(0.51, 0.1, 0.0),
            deviation: 0.0,
        },
    );
    let (next, d) = update_state(&s, Some(&pick), &m1(&s), &m2, &UpdateConfig::default());
    assert_eq!(d.removed, atoms(&["pose_is_known(gear1)"]));
    assert!(d.added.is_empty());
    assert_eq!(
        next.position(&"gear1".into()),
        Some(Position::new(0.51, 0.1))
    );
    assert_eq!(next.relations(), s.relations());
}

proptest! {
    #[test]
    fn maintenance_never_adds_relations(
        shifts in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2, any::<bool>()), 3),
        pose in (-0.05f64..0.05, -0.05f64..0.05),
        acting in any::<bool>(),
    ) {
        let s = tracked();
        let mut r = m1(&s);
        for ((dx, dy, lost), o) in shifts.iter().zip(["shaft1", "base", "gear1"]) {
            if *lost {
                let e = r.entries.get_mut(&ObjectId::from(o)).unwrap();
                e.position = None;
                e.lost = true;
            } else {
                moved(&mut r, o, *dx, *dy);
            }
        }
        let mut m2 = M2Report::default();
        m2.entries.insert("gear1".into(), M2Entry { pose: Pose::new(0.5 + pose.0, 0.1 + pose.1, 0.0), deviation: 0.0 });
        let pick = ActionInstance::parse("pick_up(gripper, gear1)").unwrap();
        let current = acting.then_some(&pick);
        let (next, d) = update_state(&s, current, &r, &m2, &UpdateConfig::default());
        prop_assert!(d.added.is_empty());
        prop_assert!(next.relations().is_subset(s.relations()));
        prop_assert_eq!(diff(&s, &next).unwrap(), d);
        prop_assert_eq!(next.constraints(), s.constraints());
    }
}
