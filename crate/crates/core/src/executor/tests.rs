use std::collections::BTreeMap;
use std::sync::Arc;

use super::*;
use crate::atom::{ActionInstance, ObjectId};
use crate::bt::{self, BehaviorTree, NodeKind, Status};
use crate::fixtures;
use crate::planner::{PlanBundle, PlanError, ScriptedGate, Subtask, Verdict};
use crate::sim::{DisturbanceKind, Payload, SimEnv, WorkcellDoc};
use crate::world::{Domain, WorldState};

fn workcell() -> WorkcellDoc {
    WorkcellDoc::from_json(fixtures::WORKCELL).unwrap()
}

fn plan(len: usize) -> PlanBundle {
    fixtures::mock_plan(len).unwrap()
}

fn scenario(len: usize, kind: Option<DisturbanceKind>) -> Scenario {
    Scenario::from_json(fixtures::scenario(len, kind).unwrap()).unwrap()
}

fn env(seed: u64) -> SimEnv {
    SimEnv::new(
        &workcell(),
        Arc::new(Domain::gearset()),
        Default::default(),
        seed,
    )
    .unwrap()
}

fn execute(len: usize, kind: Option<DisturbanceKind>) -> (ExecutionTrace, RunMetrics) {
    run_scenario(
        &plan(len),
        &workcell(),
        &scenario(len, kind),
        ExecutionConfig::default(),
    )
    .unwrap()
}

fn action(s: &str) -> ActionInstance {
    ActionInstance::parse(s).unwrap()
}

fn position(trace: &ExecutionTrace, pred: impl Fn(&EventKind) -> bool) -> Option<usize> {
    trace.events.iter().position(|e| pred(&e.kind))
}

#[test]
fn extension_prepends_one_guard_per_achieved_relation() {
    let p = plan(3);
    let ext = extend(&p.subtrees[2], &p.goals[..2]);
    assert_eq!(ext.root.id.as_str(), EXTENSION_ROOT);
    let NodeKind::Sequence(children) = &ext.root.kind else {
        panic!("extension root is not a sequence")
    };
    assert_eq!(children.len(), 3);
    assert_eq!(children[0].as_condition(), Some(&p.goals[0]));
    assert_eq!(children[1].as_condition(), Some(&p.goals[1]));
    assert_eq!(children[2], p.subtrees[2].root);
    assert_eq!(guarded_stage(&children[1].id), Some(1));
    assert_eq!(guarded_stage(&p.subtrees[2].root.id), None);
    ext.check().unwrap();
}

#[test]
fn first_stage_extension_is_the_subtree_itself_under_a_sequence() {
    let p = plan(1);
    let ext = extend(&p.subtrees[0], &[]);
    assert_eq!(
        ext.root.children(),
        std::slice::from_ref(&p.subtrees[0].root)
    );
}

#[test]
fn violated_guard_blocks_the_stage_body() {
    let p = plan(3);
    let ext = extend(&p.subtrees[1], &p.goals[..1]);
    let mut belief = p.initial_state().clone();
    let mut env = env(0);
    let out = bt::tick(&ext, &mut belief, &mut env).unwrap();
    assert_eq!(out.status, Status::Failure);
    assert!(out.trace.actions.is_empty());
    assert_eq!(bt::failed_node(&ext, &out.trace).unwrap(), guard_id(0));
    assert!(env.current_action().is_none());
}

#[test]
fn undisturbed_runs_succeed_for_every_task_length() {
    for len in fixtures::TASK_LENGTHS {
        let (trace, m) = execute(len, None);
        assert!(m.ts, "task {len}: {m:?}");
        assert_eq!(m.cr, 1.0);
        assert!(!m.drr_applicable);
        assert_eq!(m.replans, 0);
        let completed: Vec<usize> = trace
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::StageComplete { stage, .. } => Some(stage),
                _ => None,
            })
            .collect();
        assert_eq!(completed, (0..len).collect::<Vec<_>>());
    }
}

#[test]
fn first_event_is_a_tick() {
    let (trace, _) = execute(1, None);
    assert!(matches!(
        trace.events[0].kind,
        EventKind::Tick { stage: 0, .. }
    ));
    assert_eq!(trace.events[0].t, 0);
}

#[test]
fn displaced_part_is_recovered_before_the_interrupted_action_finishes() {
    let (trace, m) = execute(5, Some(DisturbanceKind::I));
    let pick = action("pick_up(gripper, gear3)");
    let retrieve = action("retrieve_pose(gear3)");
    let dist = position(&trace, |k| {
        matches!(k, EventKind::Disturbance { accepted: true, .. })
    })
    .unwrap();
    let recovery = position(
        &trace,
        |k| matches!(k, EventKind::SelfRecovery { action, .. } if *action == retrieve),
    )
    .unwrap();
    let suspend = position(
        &trace,
        |k| matches!(k, EventKind::ActionSuspend { action } if *action == pick),
    )
    .unwrap();
    let resumed = position(
        &trace,
        |k| matches!(k, EventKind::ActionStart { action, resumed: true, .. } if *action == pick),
    )
    .unwrap();
    let done = trace
        .events
        .iter()
        .rposition(|e| matches!(&e.kind, EventKind::ActionComplete { action, success: true, .. } if *action == pick))
        .unwrap();
    assert!(dist < recovery && recovery < done);
    assert!(suspend < resumed && resumed < done);
    assert!(position(&trace, |k| matches!(k, EventKind::Rollback { .. })).is_none());
    assert!(m.ts);
    assert_eq!((m.disturbances, m.recovered, m.replans), (1, 1, 0));
}

#[test]
fn detached_part_rolls_back_to_the_stage_that_assembled_it() {
    let (trace, m) = execute(5, Some(DisturbanceKind::III));
    let rollbacks: Vec<(usize, usize)> = trace
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Rollback { from, to } => Some((from, to)),
            _ => None,
        })
        .collect();
    assert_eq!(rollbacks, vec![(4, 2)]);
    let rb = position(&trace, |k| matches!(k, EventKind::Rollback { .. })).unwrap();
    let EventKind::Replan {
        stage, ok, tree, ..
    } = &trace.events[rb + 1].kind
    else {
        panic!("rollback not followed by a replan")
    };
    assert_eq!((*stage, *ok), (2, true));
    let tree = bt::from_document(tree.as_ref().unwrap()).unwrap();
    let actions: Vec<String> = bt::units(&tree.root)
        .map(|u| u.action.to_string())
        .collect();
    assert_eq!(
        actions,
        [
            "pick_up(gripper, compound_gear)",
            "insert(gripper, compound_gear, shaft2)"
        ]
    );
    let after: Vec<usize> = trace.events[rb..]
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::StageComplete { stage, .. } => Some(stage),
            _ => None,
        })
        .collect();
    assert_eq!(after, [2, 3, 4]);
    assert!(m.ts);
    assert_eq!((m.drr, m.replans), (1.0, 1));
}

#[test]
fn disturbance_on_an_untouched_object_needs_no_recovery() {
    let (trace, m) = execute(5, Some(DisturbanceKind::II));
    assert!(m.ts && m.drr_applicable);
    assert_eq!(m.drr, 1.0);
    assert!(position(&trace, |k| matches!(
        k,
        EventKind::Rollback { .. } | EventKind::Replan { .. }
    ))
    .is_none());
    assert!(position(&trace, |k| matches!(k, EventKind::SelfRecovery { .. })).is_none());
}

#[test]
fn short_task_has_no_detachable_part() {
    let (_, m) = execute(1, Some(DisturbanceKind::III));
    assert!(m.ts);
    assert!(!m.drr_applicable);
    assert_eq!(m.disturbances, 0);
}

#[test]
fn rollback_reentry_reaches_the_undisturbed_relations() {
    for len in [3, 5] {
        let p = plan(len);
        let sc = scenario(len, Some(DisturbanceKind::III));
        let env = SimEnv::new(
            &workcell(),
            p.initial_state().domain().clone(),
            sc.perception_noise,
            0,
        )
        .unwrap();
        let mut run = Run::new(
            &p,
            env,
            sc.disturbances.clone(),
            ExecutionConfig::default(),
            Box::new(FallbackReplanner),
        )
        .unwrap();
        while run.step().unwrap() {}
        assert!(run.metrics().ts);
        assert_eq!(
            run.belief().relations(),
            p.snapshots[len].relations(),
            "task {len}"
        );
        assert_eq!(&run.env().state().relations(), p.snapshots[len].relations());
    }
}

#[test]
fn runs_are_deterministic_under_noise() {
    let p = plan(5);
    let mut sc = scenario(5, Some(DisturbanceKind::I));
    sc.perception_noise = noise_at(1.0);
    let cfg = ExecutionConfig {
        seed: 42,
        ..Default::default()
    };
    let a = run_scenario(&p, &workcell(), &sc, cfg).unwrap();
    let b = run_scenario(&p, &workcell(), &sc, cfg).unwrap();
    assert_eq!(a, b);
}

/// Detaches shaft3 every time stage 4 is reached so stage 3 is replanned
/// until the bound is exhausted.
#[test]
fn replan_bound_stops_the_run_with_partial_completion() {
    let p = plan(5);
    let cfg = ExecutionConfig::default();
    let mut run = Run::new(&p, env(0), Vec::new(), cfg, Box::new(FallbackReplanner)).unwrap();
    let mut armed = true;
    while run.step().unwrap() {
        if run.stage() == 4 && armed {
            run.inject(
                DisturbanceKind::III,
                Payload {
                    object: ObjectId::new("shaft3"),
                    displacement: [0.05, -0.05],
                    detach_from: Some(ObjectId::new("base")),
                },
            )
            .unwrap();
            armed = false;
        }
        if run.stage() < 4 {
            armed = true;
        }
    }
    let m = run.metrics();
    assert!(!m.ts);
    assert!((m.cr - 0.6).abs() < 1e-12, "{m:?}");
    assert_eq!(m.bound.as_deref(), Some("max_replans(stage 3)"));
    assert_eq!(m.replans, 3);
    let EventKind::RunFinished {
        stages_completed, ..
    } = run.trace().events.last().unwrap().kind
    else {
        panic!("run did not finish")
    };
    assert_eq!(stages_completed, 3);
}

struct Refusing;

impl Replanner for Refusing {
    fn replan(&mut self, _: usize, _: &Subtask, _: &WorldState) -> Result<BehaviorTree, PlanError> {
        Err(PlanError::Backend("offline".into()))
    }
}

#[test]
fn failed_replan_ends_the_run() {
    let p = plan(5);
    let sc = scenario(5, Some(DisturbanceKind::III));
    let (trace, m) = run(
        &p,
        env(0),
        sc.disturbances,
        ExecutionConfig::default(),
        Box::new(Refusing),
    )
    .unwrap();
    assert!(trace.events.iter().any(|e| matches!(
        &e.kind,
        EventKind::Replan {
            ok: false,
            error: Some(_),
            ..
        }
    )));
    assert_eq!(m.bound.as_deref(), Some("replan_failed(stage 2)"));
    assert_eq!(m.cr, 0.4);
    assert_eq!(m.drr, 0.0);
}

#[test]
fn gated_replans_can_be_rejected() {
    let p = plan(5);
    let sc = scenario(5, Some(DisturbanceKind::III));
    let gate = ScriptedGate::with_verdicts([Verdict::Feedback("not now".into())]);
    let replanner = GatedReplanner::new(FallbackReplanner, Box::new(gate));
    let (_, m) = run(
        &p,
        env(0),
        sc.disturbances,
        ExecutionConfig::default(),
        Box::new(replanner),
    )
    .unwrap();
    assert!(!m.ts);
    assert!(m.bound.unwrap().starts_with("replan_failed"));

    let replanner =
        GatedReplanner::new(FallbackReplanner, Box::new(ScriptedGate::with_verdicts([])));
    let sc = scenario(5, Some(DisturbanceKind::III));
    let (_, m) = run(
        &p,
        env(0),
        sc.disturbances,
        ExecutionConfig::default(),
        Box::new(replanner),
    )
    .unwrap();
    assert!(m.ts);
}

#[test]
fn invalid_injection_is_refused_up_front() {
    let mut run = Run::new(
        &plan(1),
        env(0),
        Vec::new(),
        ExecutionConfig::default(),
        Box::new(FallbackReplanner),
    )
    .unwrap();
    let err = run
        .inject(
            DisturbanceKind::III,
            Payload {
                object: ObjectId::new("gear1"),
                displacement: [0.1, 0.0],
                detach_from: Some(ObjectId::new("shaft1")),
            },
        )
        .unwrap_err();
    assert!(matches!(err, ExecError::Sim(_)));
    while run.step().unwrap() {}
    assert!(matches!(
        run.inject(
            DisturbanceKind::II,
            Payload {
                object: ObjectId::new("gear3"),
                displacement: [0.1, 0.0],
                detach_from: None,
            }
        ),
        Err(ExecError::Finished)
    ));
}

#[test]
fn tick_bound_is_reported() {
    let cfg = ExecutionConfig {
        max_ticks: 20,
        ..Default::default()
    };
    let (_, m) = run_scenario(&plan(3), &workcell(), &Scenario::undisturbed(3, 0), cfg).unwrap();
    assert_eq!(m.bound.as_deref(), Some("max_ticks"));
    assert_eq!(m.cr, 0.0);
}

#[test]
fn mismatched_scenario_is_rejected() {
    let err = run_scenario(
        &plan(3),
        &workcell(),
        &Scenario::undisturbed(5, 0),
        ExecutionConfig::default(),
    );
    assert!(matches!(err, Err(ExecError::PlanMismatch(_))));
    let bad = ExecutionConfig {
        frequency: 0.0,
        ..Default::default()
    };
    assert!(matches!(
        run_scenario(&plan(3), &workcell(), &Scenario::undisturbed(3, 0), bad),
        Err(ExecError::InvalidConfig(_))
    ));
}

#[test]
fn trace_round_trips_through_json() {
    let (trace, m) = execute(5, Some(DisturbanceKind::III));
    let text = serde_json::to_string(&trace).unwrap();
    let back = ExecutionTrace::from_json(&text).unwrap();
    assert_eq!(back, trace);
    assert_eq!(compute_metrics(&back, 5), m);
    assert!(trace.render().contains("ROLLBACK stage 4 -> stage 2"));
}

#[test]
fn event_wire_format_is_tagged() {
    let e = Event {
        t: 3,
        kind: EventKind::Rollback { from: 4, to: 2 },
    };
    assert_eq!(
        serde_json::to_value(&e).unwrap(),
        serde_json::json!({"t": 3, "type": "rollback", "from": 4, "to": 2})
    );
}

#[test]
fn metrics_of_an_empty_trace() {
    let m = compute_metrics(&ExecutionTrace::default(), 3);
    assert!(!m.ts);
    assert_eq!((m.cr, m.drr, m.drr_applicable), (0.0, 1.0, false));
}

#[test]
fn unrecovered_disturbance_lowers_drr() {
    let (mut trace, _) = execute(5, Some(DisturbanceKind::III));
    let rb = position(&trace, |k| matches!(k, EventKind::Rollback { .. })).unwrap();
    trace.events.truncate(rb + 2);
    let m = compute_metrics(&trace, 5);
    assert_eq!((m.disturbances, m.recovered, m.drr), (1, 0, 0.0));
    assert_eq!(m.cr, 0.4);
}

#[test]
fn seeds_are_distinct_and_stable() {
    let a = derive_seed(0, 5, Some(DisturbanceKind::I), 3);
    assert_eq!(a, derive_seed(0, 5, Some(DisturbanceKind::I), 3));
    let mut seen = std::collections::BTreeSet::new();
    for len in [1, 3, 5] {
        for k in [
            None,
            Some(DisturbanceKind::I),
            Some(DisturbanceKind::II),
            Some(DisturbanceKind::III),
        ] {
            for t in 0..15 {
                assert!(seen.insert(derive_seed(0, len, k, t)));
            }
        }
    }
    assert_ne!(a, derive_seed(1, 5, Some(DisturbanceKind::I), 3));
}

fn plans() -> BTreeMap<usize, PlanBundle> {
    fixtures::TASK_LENGTHS
        .iter()
        .map(|&l| (l, plan(l)))
        .collect()
}

#[test]
fn bench_matrix_is_complete_and_reproducible() {
    let cfg = BenchConfig {
        trials: 2,
        ..Default::default()
    };
    let a = bench(&plans(), &workcell(), &cfg).unwrap();
    let b = bench(&plans(), &workcell(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trials.len(), 24);
    assert_eq!(a.cells.len(), 12);
    assert!(a.cells.iter().all(|c| c.ts_rate == 1.0 && c.cr_mean == 1.0));
    assert_eq!(
        a.cell(1, Some(DisturbanceKind::III)).unwrap().drr_mean,
        None
    );
    assert_eq!(
        a.cell(5, Some(DisturbanceKind::III)).unwrap().drr_mean,
        Some(1.0)
    );
    let csv = a.to_csv();
    assert!(csv.starts_with("task_length,disturbance,trial,TS,CR,DRR,ticks,replans,noise\n"));
    assert_eq!(csv.lines().count(), 25);
    assert!(a.cells_csv().contains("1,III,2,1.0000,1.0000,N/A,"));
    assert_eq!(a.to_json()["cells"].as_array().unwrap().len(), 12);
}

#[test]
fn bench_requires_a_plan_per_length() {
    let mut p = plans();
    p.remove(&3);
    assert!(matches!(
        bench(&p, &workcell(), &BenchConfig::default()),
        Err(ExecError::PlanMismatch(_))
    ));
}

#[test]
fn probe_finds_the_unit_restoring_a_violated_atom() {
    let p = plan(5);
    let pose = crate::atom::Atom::unary("pose_is_known", "gear3");
    let unit = self_recovery_probe(&p.subtrees[4], &pose).unwrap();
    let view = bt::as_unit(p.subtrees[4].root.find(&unit).unwrap()).unwrap();
    assert_eq!(view.action, &action("retrieve_pose(gear3)"));

    let hold = crate::atom::Atom::binary("hold", "gripper", "gear1");
    let unit = self_recovery_probe(&p.subtrees[0], &hold).unwrap();
    let view = bt::as_unit(p.subtrees[0].root.find(&unit).unwrap()).unwrap();
    assert_eq!(view.action, &action("pick_up(gripper, gear1)"));

    assert_eq!(self_recovery_probe(&p.subtrees[4], &p.goals[2]), None);
}

#[test]
fn empty_matrix_gives_an_empty_table() {
    let cfg = BenchConfig {
        task_lengths: Vec::new(),
        ..Default::default()
    };
    let t = bench(&BTreeMap::new(), &workcell(), &cfg).unwrap();
    assert!(t.trials.is_empty() && t.cells.is_empty());
    assert_eq!(t.to_csv().lines().count(), 1);
}

#[test]
fn injected_disturbance_matches_the_scripted_one() {
    let p = plan(5);
    let payload = Payload {
        object: ObjectId::new("compound_gear"),
        displacement: [0.05, 0.05],
        detach_from: Some(ObjectId::new("shaft2")),
    };
    let mut live = Run::new(
        &p,
        env(0),
        Vec::new(),
        ExecutionConfig::default(),
        Box::new(FallbackReplanner),
    )
    .unwrap();
    let mut at = None;
    while live.step().unwrap() {
        if at.is_none() && live.stage() == 4 {
            live.inject(DisturbanceKind::III, payload.clone()).unwrap();
            at = Some(live.env().tick() + 1);
        }
    }
    let scripted = crate::sim::Disturbance {
        kind: DisturbanceKind::III,
        trigger: crate::sim::Trigger::AtTick {
            at_tick: at.unwrap(),
        },
        payload,
    };
    let (trace, m) = run(
        &p,
        env(0),
        vec![scripted],
        ExecutionConfig::default(),
        Box::new(FallbackReplanner),
    )
    .unwrap();
    assert_eq!(&trace, live.trace());
    assert!(m.ts && m.replans == 1);
}
