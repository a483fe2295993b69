use super::*;
use crate::fixtures;
use crate::world::{init_state, SetupDoc};

fn env(noise: NoiseModel) -> SimEnv {
    let doc = WorkcellDoc::from_json(fixtures::WORKCELL).unwrap();
    SimEnv::new(&doc, Arc::new(Domain::gearset()), noise, 11).unwrap()
}

fn belief(env: &SimEnv, known: &[&str]) -> WorldState {
    let setup = SetupDoc::from_json(fixtures::SETUP).unwrap();
    let (mut s, _) = init_state(&setup, Arc::new(Domain::gearset())).unwrap();
    s = s
        .with_constraints(&[crate::atom::Atom::binary(
            "can_insert_to",
            "gear1",
            "shaft1",
        )])
        .unwrap();
    for o in known {
        let o = ObjectId::from(*o);
        let pose = env.state().poses[&o];
        s.apply_outcome(
            &ActionInstance::new("retrieve_pose", [o.clone()]),
            &[(o, pose)],
        )
        .unwrap();
    }
    s
}

fn run_to_end(env: &mut SimEnv, a: &ActionInstance) -> ActionPoll {
    for _ in 0..100 {
        match env.poll(a) {
            ActionPoll::Running => env.step(),
            other => return other,
        }
    }
    panic!("action did not finish");
}

fn act(name: &str, args: &[&str]) -> ActionInstance {
    ActionInstance::new(name, args.iter().copied())
}

#[test]
fn idle_step_changes_nothing_but_time() {
    let mut e = env(NoiseModel::default());
    let before = e.state().clone();
    e.step();
    assert_eq!(e.state(), &before);
    assert_eq!(e.tick(), 1);
    assert_eq!(e.poll_action().unwrap_err(), SimError::NoAction);
}

#[test]
fn pick_up_runs_for_its_duration() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1"]);
    let pick = act("pick_up", &["gripper", "gear1"]);
    e.start(&pick, &b).unwrap();
    for _ in 0..9 {
        e.step();
        assert_eq!(e.poll(&pick), ActionPoll::Running);
    }
    e.step();
    assert_eq!(e.poll(&pick), ActionPoll::Succeeded(vec![]));
    assert_eq!(e.state().held, Some(ObjectId::from("gear1")));
    e.acknowledge(&pick);
    assert_eq!(e.poll(&pick), ActionPoll::Idle);
}

#[test]
fn insert_completion_adds_attachment() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1", "shaft1"]);
    let pick = act("pick_up", &["gripper", "gear1"]);
    e.start(&pick, &b).unwrap();
    run_to_end(&mut e, &pick);
    e.acknowledge(&pick);
    let insert = act("insert", &["gripper", "gear1", "shaft1"]);
    e.start(&insert, &b).unwrap();
    for _ in 0..19 {
        e.step();
    }
    assert!(!e.state().attachments.contains_key(&ObjectId::from("gear1")));
    e.step();
    assert_eq!(e.poll(&insert), ActionPoll::Succeeded(vec![]));
    let a = &e.state().attachments[&ObjectId::from("gear1")];
    assert_eq!(
        (a.relation.as_str(), a.base.as_str()),
        ("is_inserted_to", "shaft1")
    );
    assert_eq!(e.state().held, None);
    assert!(e.state().relations().contains(&crate::atom::Atom::binary(
        "is_inserted_to",
        "gear1",
        "shaft1"
    )));
}

#[test]
fn suspension_freezes_progress() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1"]);
    let pick = act("pick_up", &["gripper", "gear1"]);
    e.start(&pick, &b).unwrap();
    for _ in 0..4 {
        e.step();
    }
    e.suspend(&pick);
    assert_eq!(e.poll(&pick), ActionPoll::Suspended);
    for _ in 0..20 {
        e.step();
    }
    assert_eq!(e.state().suspended[&pick], 4);
    e.start(&pick, &b).unwrap();
    assert_eq!(e.poll_action().unwrap().1, 4);
    for _ in 0..6 {
        e.step();
    }
    assert_eq!(e.poll(&pick), ActionPoll::Succeeded(vec![]));
}

#[test]
fn displaced_target_fails_the_action() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1", "shaft1"]);
    let pick = act("pick_up", &["gripper", "gear1"]);
    e.start(&pick, &b).unwrap();
    run_to_end(&mut e, &pick);
    e.acknowledge(&pick);
    let insert = act("insert", &["gripper", "gear1", "shaft1"]);
    e.start(&insert, &b).unwrap();
    e.step();
    e.inject(
        DisturbanceKind::I,
        &Payload {
            object: "shaft1".into(),
            displacement: [0.03, 0.0],
            detach_from: None,
        },
    )
    .unwrap();
    assert!(matches!(run_to_end(&mut e, &insert), ActionPoll::Failed(_)));
    // a restart against the stale belief is refused outright
    e.acknowledge(&insert);
    assert!(e.start(&insert, &b).is_err());
}

#[test]
fn start_checks_ground_truth() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1", "shaft1"]);
    let err = e
        .start(&act("insert", &["gripper", "gear1", "shaft1"]), &b)
        .unwrap_err();
    assert!(err.contains("does not hold"), "{err}");
    let unknown = belief(&e, &[]);
    assert!(e
        .start(&act("pick_up", &["gripper", "gear1"]), &unknown)
        .is_err());
}

#[test]
fn zero_noise_reports_equal_truth() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear3"]);
    e.start(&act("pick_up", &["gripper", "gear3"]), &b).unwrap();
    let (m1, m2) = e.sense();
    for (o, p) in &e.state().poses {
        assert_eq!(m1.entries[o].position, Some(p.position()));
        assert!(!m1.entries[o].lost && !m1.entries[o].misassigned);
    }
    let keys: Vec<_> = m2.entries.keys().map(ObjectId::as_str).collect();
    assert_eq!(keys, ["gear3", "gripper"]);
    assert_eq!(
        m2.entries[&ObjectId::from("gear3")].pose,
        e.state().poses[&ObjectId::from("gear3")]
    );
}

#[test]
fn seeded_loss_flags_objects_and_is_reproducible() {
    let noise = NoiseModel {
        loss_rate: 5.0 / 10.0,
        misassign_rate: 0.2,
        pose_sigma: 0.002,
    };
    let mut a = env(noise);
    let mut b = env(noise);
    let mut lost = 0;
    for _ in 0..50 {
        a.step();
        b.step();
        let (ra, _) = a.sense();
        assert_eq!(ra, b.sense().0);
        lost += ra.entries.values().filter(|e| e.lost).count();
        for e in ra.entries.values() {
            assert_eq!(e.lost, e.position.is_none());
        }
    }
    assert!(lost > 0);
}

#[test]
fn disturbance_kinds_are_checked() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1"]);
    let move_ = |o: &str| Payload {
        object: o.into(),
        displacement: [0.02, 0.0],
        detach_from: None,
    };
    assert!(e
        .check_disturbance(DisturbanceKind::I, &move_("gear1"))
        .is_err());
    e.start(&act("pick_up", &["gripper", "gear1"]), &b).unwrap();
    e.check_disturbance(DisturbanceKind::I, &move_("gear1"))
        .unwrap();
    assert!(e
        .check_disturbance(DisturbanceKind::II, &move_("gear1"))
        .is_err());
    e.check_disturbance(DisturbanceKind::II, &move_("compound_gear"))
        .unwrap();
    assert!(e
        .check_disturbance(DisturbanceKind::III, &move_("shaft1"))
        .is_err());
    let detach = Payload {
        detach_from: Some("base".into()),
        ..move_("shaft1")
    };
    e.check_disturbance(DisturbanceKind::III, &detach).unwrap();
    assert!(e
        .check_disturbance(
            DisturbanceKind::III,
            &Payload {
                detach_from: Some("shaft2".into()),
                ..move_("shaft1")
            }
        )
        .is_err());
}

#[test]
fn detaching_moves_the_part_and_its_dependents() {
    let mut e = env(NoiseModel::default());
    let b = belief(&e, &["gear1", "shaft1"]);
    for a in [
        act("pick_up", &["gripper", "gear1"]),
        act("insert", &["gripper", "gear1", "shaft1"]),
    ] {
        e.start(&a, &b).unwrap();
        run_to_end(&mut e, &a);
        e.acknowledge(&a);
    }
    let before = e.state().poses.clone();
    let moved = e
        .inject(
            DisturbanceKind::III,
            &Payload {
                object: "shaft1".into(),
                displacement: [0.0, 0.1],
                detach_from: Some("base".into()),
            },
        )
        .unwrap();
    let moved: Vec<_> = moved.iter().map(ObjectId::as_str).collect();
    assert_eq!(moved, ["shaft1", "gear1"]);
    let rel = e.state().relations();
    assert!(!rel.contains(&crate::atom::Atom::binary("is_placed_on", "shaft1", "base")));
    assert!(rel.contains(&crate::atom::Atom::binary(
        "is_inserted_to",
        "gear1",
        "shaft1"
    )));
    let g = ObjectId::from("gear1");
    assert!((e.state().poses[&g].y - before[&g].y - 0.1).abs() < 1e-12);
}
