use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::atom::{ActionInstance, Atom};
use crate::bt::{
    self, as_unit, failed_node, to_document, units, BehaviorTree, NodeId, Status, TickOptions,
};
use crate::planner::{validate_logical, validate_syntactic, PlanBundle, PlanError, Subtask};
use crate::sim::{Disturbance, DisturbanceKind, Payload, Phase, SimEnv, Trigger, WorkcellDoc};
use crate::world::{update_state, validate_reports, AtomDelta, WorldState};

use super::metrics::{compute_metrics, RunMetrics};
use super::replan::{FallbackReplanner, Replanner};
use super::trace::{Event, EventKind, ExecutionTrace, UpdateSource};
use super::{extend, guarded_stage, ExecError, ExecutionConfig, Scenario};

/// One execution of a plan, advanced a tick at a time.
///
/// Each [`step`](Run::step) ticks the extended tree of the current stage,
/// handles its outcome (advance, rollback or replan), advances the
/// simulator, fires due disturbances and runs one maintenance pass.
pub struct Run {
    subtasks: Vec<Subtask>,
    goals: Vec<Atom>,
    subtrees: Vec<BehaviorTree>,
    env: SimEnv,
    belief: WorldState,
    cfg: ExecutionConfig,
    replanner: Box<dyn Replanner>,
    stage: usize,
    scheduled: Vec<(Disturbance, bool)>,
    injected: VecDeque<(DisturbanceKind, Payload)>,
    replans: BTreeMap<usize, u32>,
    /// Unit targets seen holding during the current stage attempt.
    seen_targets: BTreeSet<Atom>,
    trace: ExecutionTrace,
    check_sync: bool,
    finished: bool,
}

impl Run {
    pub fn new(
        plan: &PlanBundle,
        env: SimEnv,
        disturbances: Vec<Disturbance>,
        cfg: ExecutionConfig,
        replanner: Box<dyn Replanner>,
    ) -> Result<Self, ExecError> {
        cfg.validate()?;
        if plan.snapshots.is_empty() || plan.subtasks.len() != plan.subtrees.len() {
            return Err(ExecError::PlanMismatch("plan bundle is incomplete".into()));
        }
        let check_sync = cfg.check_sync && env.noise().is_zero() && disturbances.is_empty();
        let mut run = Self {
            subtasks: plan.subtasks.clone(),
            goals: plan.goals.clone(),
            subtrees: plan.subtrees.clone(),
            env,
            belief: plan.initial_state().clone(),
            cfg,
            replanner,
            stage: 0,
            scheduled: disturbances.into_iter().map(|d| (d, false)).collect(),
            injected: VecDeque::new(),
            replans: BTreeMap::new(),
            seen_targets: BTreeSet::new(),
            trace: ExecutionTrace::default(),
            check_sync,
            finished: false,
        };
        run.maintain();
        run.sync_check()?;
        Ok(run)
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn stages(&self) -> usize {
        self.subtrees.len()
    }

    pub fn belief(&self) -> &WorldState {
        &self.belief
    }

    pub fn env(&self) -> &SimEnv {
        &self.env
    }

    pub fn subtrees(&self) -> &[BehaviorTree] {
        &self.subtrees
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn metrics(&self) -> RunMetrics {
        compute_metrics(&self.trace, self.stages())
    }

    /// Checks a disturbance against the current state and queues it for the
    /// next step, where it fires exactly like a scripted one.
    pub fn inject(&mut self, kind: DisturbanceKind, payload: Payload) -> Result<(), ExecError> {
        if self.finished {
            return Err(ExecError::Finished);
        }
        self.env.check_disturbance(kind, &payload)?;
        self.injected.push_back((kind, payload));
        Ok(())
    }

    fn emit(&mut self, kind: EventKind) {
        self.trace.events.push(Event {
            t: self.env.tick(),
            kind,
        });
    }

    fn emit_delta(&mut self, source: UpdateSource, delta: AtomDelta) {
        if !delta.is_empty() {
            self.emit(delta_event(source, delta));
        }
    }

    /// Advances the run by one tick. Returns whether it is still going.
    pub fn step(&mut self) -> Result<bool, ExecError> {
        if self.finished {
            return Ok(false);
        }
        if self.stage >= self.stages() {
            self.finish(None);
            return Ok(false);
        }
        if self.env.tick() >= self.cfg.max_ticks {
            self.finish(Some("max_ticks".into()));
            return Ok(false);
        }
        let i = self.stage;
        let tree = extend(&self.subtrees[i], &self.goals[..i]);
        let scope = self.subtrees[i].root.clone();
        let before = self.env.current_action().cloned();
        let out = bt::tick_with(
            &tree,
            &mut self.belief,
            &mut self.env,
            TickOptions {
                recovery_scope: Some(&scope),
            },
        )?;
        self.emit(EventKind::Tick {
            stage: i,
            status: out.status,
            visited: out.trace.visited.clone(),
        });
        self.record_actions(&scope, &out.trace);

        let running: Vec<ActionInstance> = out
            .trace
            .running_actions(&tree.root)
            .into_iter()
            .cloned()
            .collect();
        if let Some(cur) = self.env.current_action().cloned() {
            if !running.contains(&cur) {
                self.env.suspend_action(&cur);
            }
        }
        if let Some(prev) = before {
            if self.env.current_action() != Some(&prev)
                && self.env.state().suspended.contains_key(&prev)
            {
                self.emit(EventKind::ActionSuspend { action: prev });
            }
        }

        let goal_reached = self.belief.holds(&self.goals[i]).unwrap_or(false);
        match out.status {
            Status::Running => {}
            Status::Success if goal_reached => {
                self.emit(EventKind::StageComplete {
                    stage: i,
                    relation: self.goals[i].clone(),
                });
                self.stage += 1;
                self.seen_targets.clear();
                if self.stage == self.stages() {
                    self.finish(None);
                    return Ok(false);
                }
            }
            status => {
                let failed = match status {
                    Status::Failure => failed_node(&tree, &out.trace)?,
                    _ => tree.root.id.clone(),
                };
                let target = match guarded_stage(&failed) {
                    Some(j) if j < i => {
                        self.emit(EventKind::Rollback { from: i, to: j });
                        j
                    }
                    _ => i,
                };
                self.stage = target;
                if let Err(bound) = self.replan(target) {
                    self.finish(Some(bound));
                    return Ok(false);
                }
            }
        }

        self.env.step();
        self.fire_disturbances();
        self.maintain();
        self.sync_check()?;
        Ok(true)
    }

    /// Steps until the run finishes.
    pub fn run_to_end(mut self) -> Result<(ExecutionTrace, RunMetrics), ExecError> {
        while self.step()? {}
        let metrics = self.metrics();
        Ok((self.trace, metrics))
    }

    fn record_actions(&mut self, scope: &bt::BtNode, trace: &bt::TickTrace) {
        let unit_of: BTreeMap<&NodeId, (&NodeId, &Atom)> = units(scope)
            .map(|u| (&u.action_node.id, (&u.node.id, u.target)))
            .collect();
        let target_ids: BTreeMap<&NodeId, &Atom> = units(scope)
            .map(|u| (&u.node.children()[0].id, u.target))
            .collect();
        let mut events = Vec::new();
        let mut effects = Some(trace.effects.clone()).filter(|d| !d.is_empty());
        for ev in &trace.actions {
            match ev {
                bt::ActionEvent::Started {
                    node,
                    action,
                    resumed,
                } => {
                    events.push(EventKind::ActionStart {
                        action: action.clone(),
                        node: node.clone(),
                        resumed: *resumed,
                    });
                    // A unit whose target held earlier in this attempt runs
                    // again: its effect is being restored.
                    if let Some((unit, target)) = unit_of.get(node) {
                        if self.seen_targets.contains(*target) {
                            events.push(EventKind::SelfRecovery {
                                atom: (*target).clone(),
                                action: action.clone(),
                                unit: (*unit).clone(),
                            });
                        }
                    }
                }
                bt::ActionEvent::Completed {
                    node,
                    action,
                    success,
                    reason,
                } => {
                    events.push(EventKind::ActionComplete {
                        action: action.clone(),
                        node: Some(node.clone()),
                        success: *success,
                        reason: reason.clone(),
                    });
                    if *success {
                        events.extend(effects.take().map(|d| delta_event(UpdateSource::Action, d)));
                    }
                }
            }
        }
        events.extend(effects.take().map(|d| delta_event(UpdateSource::Action, d)));
        for r in &trace.recoveries {
            if let Some(u) = scope.find(&r.unit).and_then(as_unit) {
                events.push(EventKind::SelfRecovery {
                    atom: r.atom.clone(),
                    action: u.action.clone(),
                    unit: r.unit.clone(),
                });
            }
        }
        for v in &trace.visited {
            if v.status == Status::Success {
                if let Some(a) = target_ids.get(&v.node) {
                    self.seen_targets.insert((*a).clone());
                }
            }
        }
        for e in events {
            self.emit(e);
        }
    }

    /// Replaces the subtree of `stage` with a validated replan. Completions
    /// the discarded tree never acknowledged are folded into the belief.
    fn replan(&mut self, stage: usize) -> Result<(), String> {
        let count = self.replans.entry(stage).or_default();
        *count += 1;
        if *count > self.cfg.max_replans_per_stage {
            return Err(format!("max_replans(stage {stage})"));
        }
        let result = self
            .replanner
            .replan(stage, &self.subtasks[stage], &self.belief)
            .and_then(|tree| self.check_replan(tree));
        match result {
            Ok(tree) => {
                self.emit(EventKind::Replan {
                    stage,
                    ok: true,
                    tree: Some(to_document(&tree)),
                    error: None,
                });
                self.subtrees[stage] = tree;
                self.seen_targets.clear();
            }
            Err(e) => {
                self.emit(EventKind::Replan {
                    stage,
                    ok: false,
                    tree: None,
                    error: Some(e.to_string()),
                });
                return Err(format!("replan_failed(stage {stage})"));
            }
        }
        for f in self.env.take_unacknowledged() {
            match f.outcome {
                Ok(observed) => {
                    let delta = self
                        .belief
                        .apply_outcome(&f.action, &observed)
                        .unwrap_or_default();
                    self.emit(EventKind::ActionComplete {
                        action: f.action,
                        node: None,
                        success: true,
                        reason: None,
                    });
                    self.emit_delta(UpdateSource::Action, delta);
                }
                Err(reason) => self.emit(EventKind::ActionComplete {
                    action: f.action,
                    node: None,
                    success: false,
                    reason: Some(reason),
                }),
            }
        }
        Ok(())
    }

    fn check_replan(&self, tree: BehaviorTree) -> Result<BehaviorTree, PlanError> {
        let report = validate_syntactic(&to_document(&tree), Some(self.belief.domain()));
        if !report.valid {
            return Err(PlanError::SchemaViolation(report.violations));
        }
        let logic = validate_logical(&tree, &self.belief);
        if !logic.coherent {
            return Err(match logic.failed_node {
                Some(node) => PlanError::VirtualFailure { node },
                None => PlanError::GoalNotEstablished(logic.message.unwrap_or_default()),
            });
        }
        Ok(tree)
    }

    fn triggered(&self, trigger: &Trigger) -> bool {
        match trigger {
            Trigger::AtTick { at_tick } => self.env.tick() >= *at_tick,
            Trigger::AtStagePhase { at_stage_phase: p } => {
                if p.stage != self.stage {
                    return false;
                }
                match p.phase {
                    Phase::Start => true,
                    Phase::Action => match (self.env.progress(), &p.action) {
                        (Some((a, progress)), Some(want)) => {
                            a == want && progress >= p.progress.unwrap_or(0)
                        }
                        (Some((_, progress)), None) => progress >= p.progress.unwrap_or(0),
                        (None, _) => false,
                    },
                }
            }
        }
    }

    fn fire_disturbances(&mut self) {
        let mut due = Vec::new();
        for k in 0..self.scheduled.len() {
            if !self.scheduled[k].1 && self.triggered(&self.scheduled[k].0.trigger) {
                self.scheduled[k].1 = true;
                let d = &self.scheduled[k].0;
                due.push((d.kind, d.payload.clone()));
            }
        }
        due.extend(self.injected.drain(..));
        for (kind, payload) in due {
            let (accepted, moved, error) = match self.env.inject(kind, &payload) {
                Ok(moved) => (true, moved, None),
                Err(e) => (false, Vec::new(), Some(e.to_string())),
            };
            if accepted {
                self.check_sync = false;
            }
            self.emit(EventKind::Disturbance {
                kind,
                payload,
                accepted,
                moved,
                error,
            });
        }
    }

    fn maintain(&mut self) {
        let (m1, m2) = self.env.sense();
        let current = self.env.current_action().cloned();
        if let Err(e) = validate_reports(&self.belief, current.as_ref(), &m1, &m2) {
            self.emit(EventKind::ReportRejected {
                reason: e.to_string(),
            });
            return;
        }
        let (next, delta) =
            update_state(&self.belief, current.as_ref(), &m1, &m2, &self.cfg.update);
        self.belief = next;
        self.emit_delta(UpdateSource::Perception, delta);
    }

    fn sync_check(&self) -> Result<(), ExecError> {
        if !self.check_sync || !self.env.state().finished.is_empty() {
            return Ok(());
        }
        let believed: BTreeSet<Atom> = self.belief.relations().clone();
        let actual = self.env.state().relations();
        if believed != actual {
            return Err(ExecError::EnvDesync {
                tick: self.env.tick(),
                believed: believed.into_iter().collect(),
                actual: actual.into_iter().collect(),
            });
        }
        Ok(())
    }

    fn finish(&mut self, bound: Option<String>) {
        let truth = self.env.state().relations();
        let goals_hold = self
            .goals
            .iter()
            .all(|g| self.belief.holds(g).unwrap_or(false) && truth.contains(g));
        self.emit(EventKind::RunFinished {
            stages: self.stages(),
            stages_completed: self.stage,
            goals_hold,
            bound,
        });
        self.finished = true;
    }
}

fn delta_event(source: UpdateSource, delta: AtomDelta) -> EventKind {
    EventKind::StateUpdate {
        source,
        added: delta.added.into_iter().collect(),
        removed: delta.removed.into_iter().collect(),
    }
}

/// Executes `plan` to completion.
pub fn run(
    plan: &PlanBundle,
    env: SimEnv,
    disturbances: Vec<Disturbance>,
    cfg: ExecutionConfig,
    replanner: Box<dyn Replanner>,
) -> Result<(ExecutionTrace, RunMetrics), ExecError> {
    Run::new(plan, env, disturbances, cfg, replanner)?.run_to_end()
}

/// Executes `plan` in a fresh workcell under `scenario` with the rule-based
/// replanner. The simulator is seeded with `cfg.seed`.
pub fn run_scenario(
    plan: &PlanBundle,
    workcell: &WorkcellDoc,
    scenario: &Scenario,
    cfg: ExecutionConfig,
) -> Result<(ExecutionTrace, RunMetrics), ExecError> {
    if scenario.task_length != plan.len() {
        return Err(ExecError::PlanMismatch(format!(
            "scenario expects {} stages, plan has {}",
            scenario.task_length,
            plan.len()
        )));
    }
    let domain = plan.initial_state().domain().clone();
    let env = SimEnv::new(workcell, domain, scenario.perception_noise, cfg.seed)?
        .with_frequency(cfg.frequency);
    run(
        plan,
        env,
        scenario.disturbances.clone(),
        cfg,
        Box::new(FallbackReplanner),
    )
}
