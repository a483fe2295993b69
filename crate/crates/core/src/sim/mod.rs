//! Simulated workcell: ground truth, action execution, perception proxies
//! and disturbance injection.

mod disturbance;
mod noise;
mod workcell;

pub use disturbance::{Disturbance, DisturbanceKind, Payload, Phase, StagePhase, Trigger};
pub use noise::NoiseModel;
pub use workcell::{ActiveAction, Attachment, Finished, WorkcellDoc, WorkcellState};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::atom::{ActionInstance, ObjectId};
use crate::bt::{ActionPoll, ActionRuntime};
use crate::world::{
    Domain, M1Entry, M1Report, M2Entry, M2Report, Pose, Position, Role, WorldState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid workcell: {0}")]
    InvalidWorkcell(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
    #[error("no action in progress")]
    NoAction,
    #[error("physical precondition failed for {action}: {reason}")]
    PhysicalPreconditionFailure {
        action: ActionInstance,
        reason: String,
    },
}

/// Stream offsets separating the random draws of different consumers.
const SENSE_STREAM: u64 = 0;
const RETRIEVE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct SimEnv {
    domain: Arc<Domain>,
    state: WorkcellState,
    tools: BTreeSet<ObjectId>,
    durations: BTreeMap<String, u32>,
    tolerance: f64,
    noise: NoiseModel,
    seed: u64,
    /// Ticks per simulated second.
    frequency: f64,
    tick: u64,
    involved: BTreeSet<ObjectId>,
}

impl SimEnv {
    pub fn new(
        doc: &WorkcellDoc,
        domain: Arc<Domain>,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self, SimError> {
        noise.validate()?;
        let known = |o: &ObjectId| doc.poses.contains_key(o);
        let bad = |m: String| Err(SimError::InvalidWorkcell(m));
        if let Some(t) = doc.tools.iter().find(|t| !known(t)) {
            return bad(format!("tool `{t}` has no pose"));
        }
        if let Some(m) = doc.mounted.as_ref().filter(|m| !doc.tools.contains(m)) {
            return bad(format!("mounted tool `{m}` is not a tool"));
        }
        if doc.tolerance.is_nan() || doc.tolerance <= 0.0 {
            return bad(format!("tolerance must be positive, got {}", doc.tolerance));
        }
        let mut durations: BTreeMap<String, u32> = domain
            .actions
            .values()
            .map(|s| (s.name.clone(), s.duration))
            .collect();
        for (name, d) in &doc.durations {
            if !durations.contains_key(name) {
                return bad(format!("duration given for unknown action `{name}`"));
            }
            if *d == 0 {
                return bad(format!("duration of `{name}` must be positive"));
            }
            durations.insert(name.clone(), *d);
        }
        let mut state = WorkcellState {
            poses: doc
                .poses
                .iter()
                .map(|(o, p)| (o.clone(), Pose::new(p[0], p[1], p[2])))
                .collect(),
            attachments: BTreeMap::new(),
            mounted: doc.mounted.clone().or_else(|| doc.tools.first().cloned()),
            held: None,
            active: None,
            suspended: BTreeMap::new(),
            finished: Vec::new(),
        };
        for a in &doc.attachments {
            if !known(&a.part) || !known(&a.base) {
                return bad(format!(
                    "attachment {} -> {} names an unknown object",
                    a.part, a.base
                ));
            }
            if domain.classify(&a.relation) != Some(crate::world::SymbolClass::Relation) {
                return bad(format!(
                    "attachment relation `{}` is not a relation symbol",
                    a.relation
                ));
            }
            if state.attachments.contains_key(&a.part) || state.would_cycle(&a.part, &a.base) {
                return bad(format!(
                    "attachment {} -> {} is inconsistent",
                    a.part, a.base
                ));
            }
            state.attachments.insert(a.part.clone(), a.clone());
        }
        Ok(Self {
            domain,
            state,
            tools: doc.tools.iter().cloned().collect(),
            durations,
            tolerance: doc.tolerance,
            noise,
            seed,
            frequency: 10.0,
            tick: 0,
            involved: BTreeSet::new(),
        })
    }

    pub fn with_frequency(mut self, f: f64) -> Self {
        self.frequency = f;
        self
    }

    pub fn state(&self) -> &WorkcellState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectId> {
        self.state.poses.keys()
    }

    pub fn current_action(&self) -> Option<&ActionInstance> {
        self.state.active.as_ref().map(|a| &a.action)
    }

    pub fn progress(&self) -> Option<(&ActionInstance, u32)> {
        self.state.active.as_ref().map(|a| (&a.action, a.progress))
    }

    /// Objects touched by any action started so far.
    pub fn involved(&self) -> &BTreeSet<ObjectId> {
        &self.involved
    }

    pub fn duration(&self, action: &str) -> Option<u32> {
        self.durations.get(action).copied()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream + self.tick);
        rng
    }

    fn noisy_pose(&self, rng: &mut ChaCha8Rng, truth: Pose) -> (Pose, f64) {
        if self.noise.pose_sigma == 0.0 {
            return (truth, 0.0);
        }
        let n = Normal::new(0.0, self.noise.pose_sigma).expect("sigma validated");
        let (ex, ey, eyaw) = (n.sample(rng), n.sample(rng), n.sample(rng));
        (
            Pose::new(truth.x + ex, truth.y + ey, truth.yaw + eyaw),
            ex.hypot(ey),
        )
    }

    /// Reports of both perception proxies at the current tick. Pure in
    /// `(seed, tick, state)`.
    pub fn sense(&self) -> (M1Report, M2Report) {
        let mut rng = self.rng(SENSE_STREAM);
        let p_loss = self.noise.loss_rate / self.frequency;
        let mut m1 = M1Report::default();
        for (o, p) in &self.state.poses {
            let lost = p_loss > 0.0 && rng.random::<f64>() < p_loss;
            m1.entries.insert(
                o.clone(),
                M1Entry {
                    position: (!lost).then(|| p.position()),
                    lost,
                    misassigned: false,
                },
            );
        }
        if self.noise.misassign_rate > 0.0 {
            let ids: Vec<ObjectId> = m1.entries.keys().cloned().collect();
            for (i, o) in ids.iter().enumerate() {
                if rng.random::<f64>() >= self.noise.misassign_rate {
                    continue;
                }
                let j = (i + 1 + rng.random_range(0..ids.len() - 1)) % ids.len();
                let other = &ids[j];
                let (a, b) = (m1.entries[o].position, m1.entries[other].position);
                if a.is_none() || b.is_none() {
                    continue;
                }
                for (id, pos) in [(o, b), (other, a)] {
                    let e = m1.entries.get_mut(id).expect("registered object");
                    e.position = pos;
                    e.misassigned = true;
                }
            }
        }
        let mut m2 = M2Report::default();
        if let Some(active) = &self.state.active {
            for o in &active.action.args {
                if let Some(truth) = self.state.poses.get(o) {
                    let (pose, deviation) = self.noisy_pose(&mut rng, *truth);
                    m2.entries.insert(o.clone(), M2Entry { pose, deviation });
                }
            }
        }
        (m1, m2)
    }

    /// The object whose pose must match the commanded one for `action`.
    fn aimed_object(&self, action: &ActionInstance) -> Option<ObjectId> {
        let schema = self.domain.schema(&action.name).ok()?;
        match action.name.as_str() {
            "pick_up" => schema.index_of(Role::Part),
            "retrieve_pose" | "put_down" | "change_tool" => None,
            _ => schema.index_of(Role::Target),
        }
        .map(|i| action.args[i].clone())
    }

    fn relation_of(&self, action: &ActionInstance) -> Option<String> {
        self.domain
            .skills
            .values()
            .find(|b| b.action == action.name)
            .map(|b| b.relation.clone())
    }

    fn arg(&self, action: &ActionInstance, role: Role) -> Option<ObjectId> {
        let schema = self.domain.schema(&action.name).ok()?;
        schema.index_of(role).map(|i| action.args[i].clone())
    }

    /// Ground-truth conditions an action needs at (re)start and completion.
    fn physical_check(
        &self,
        action: &ActionInstance,
        commanded: &[(ObjectId, Pose)],
    ) -> Result<(), String> {
        let tool = self.arg(action, Role::Tool);
        let part = self.arg(action, Role::Part);
        if action.name != "change_tool" {
            if let Some(t) = &tool {
                if self.state.mounted.as_ref() != Some(t) {
                    return Err(format!("tool {t} is not mounted"));
                }
            }
        }
        match action.name.as_str() {
            "pick_up" => {
                if let Some(h) = &self.state.held {
                    return Err(format!("tool already holds {h}"));
                }
            }
            "retrieve_pose" | "change_tool" => {}
            _ => {
                if self.state.held != part {
                    return Err(format!(
                        "tool does not hold {}",
                        part.map(|p| p.to_string()).unwrap_or_default()
                    ));
                }
            }
        }
        if let (Some(p), Some(t)) = (&part, self.arg(action, Role::Target)) {
            if self.state.would_cycle(p, &t) {
                return Err(format!("{p} cannot be assembled onto {t}"));
            }
        }
        for (o, pose) in commanded {
            let truth = self.state.poses[o];
            if truth.translation_dist(pose) > self.tolerance {
                return Err(format!("{o} is not at the commanded pose"));
            }
        }
        Ok(())
    }

    pub fn start_action(
        &mut self,
        action: &ActionInstance,
        belief: &WorldState,
    ) -> Result<(), SimError> {
        let fail = |reason: String| SimError::PhysicalPreconditionFailure {
            action: action.clone(),
            reason,
        };
        self.domain
            .check_action(action)
            .map_err(|e| fail(e.to_string()))?;
        if let Some(o) = action
            .args
            .iter()
            .find(|o| !self.state.poses.contains_key(*o))
        {
            return Err(fail(format!("unknown object {o}")));
        }
        if action.name == "change_tool" && !self.tools.contains(&action.args[1]) {
            return Err(fail(format!("{} is not a tool", action.args[1])));
        }
        if self
            .state
            .active
            .as_ref()
            .is_some_and(|a| &a.action == action)
        {
            return Ok(());
        }
        if let Some(current) = self.state.active.clone() {
            self.suspend_action(&current.action);
        }
        let progress = self.state.suspended.remove(action).unwrap_or(0);
        let mut commanded = Vec::new();
        if let Some(o) = self.aimed_object(action) {
            let pose = belief
                .pose(&o)
                .ok_or_else(|| fail(format!("no pose known for {o}")))?;
            commanded.push((o, pose));
        }
        self.physical_check(action, &commanded).map_err(fail)?;
        self.involved.extend(
            action
                .args
                .iter()
                .filter(|o| !self.tools.contains(*o))
                .cloned(),
        );
        self.state.active = Some(ActiveAction {
            action: action.clone(),
            progress,
            duration: self.durations[&action.name],
            commanded,
        });
        Ok(())
    }

    /// Freezes the action in progress, keeping its progress.
    pub fn suspend_action(&mut self, action: &ActionInstance) -> bool {
        match self.state.active.take() {
            Some(a) if &a.action == action => {
                self.state.suspended.insert(a.action, a.progress);
                true
            }
            other => {
                self.state.active = other;
                false
            }
        }
    }

    /// Status of the action in progress.
    pub fn poll_action(&self) -> Result<(&ActionInstance, u32, u32), SimError> {
        self.state
            .active
            .as_ref()
            .map(|a| (&a.action, a.progress, a.duration))
            .ok_or(SimError::NoAction)
    }

    /// Removes and returns completions nobody acknowledged, and forgets
    /// suspended progress.
    pub fn take_unacknowledged(&mut self) -> Vec<Finished> {
        self.state.suspended.clear();
        std::mem::take(&mut self.state.finished)
    }

    /// Advances time by one tick.
    pub fn step(&mut self) {
        self.tick += 1;
        let Some(mut active) = self.state.active.take() else {
            return;
        };
        active.progress += 1;
        if active.progress < active.duration {
            self.state.active = Some(active);
            return;
        }
        let outcome = self.complete(&active);
        self.state.finished.retain(|f| f.action != active.action);
        self.state.finished.push(Finished {
            action: active.action,
            outcome,
        });
    }

    fn complete(&mut self, active: &ActiveAction) -> Result<Vec<(ObjectId, Pose)>, String> {
        self.physical_check(&active.action, &active.commanded)?;
        let a = &active.action;
        let part = self.arg(a, Role::Part);
        match a.name.as_str() {
            "pick_up" => {
                let p = part.expect("pick_up has a part");
                self.state.attachments.remove(&p);
                self.state.held = Some(p);
            }
            "put_down" => self.state.held = None,
            "retrieve_pose" => {
                let o = &a.args[0];
                let mut rng = self.rng(RETRIEVE_STREAM);
                let (pose, _) = self.noisy_pose(&mut rng, self.state.poses[o]);
                return Ok(vec![(o.clone(), pose)]);
            }
            "change_tool" => self.state.mounted = Some(a.args[1].clone()),
            _ => {
                let (part, target) = (
                    part.expect("skill has a part"),
                    self.arg(a, Role::Target).expect("skill has a target"),
                );
                let relation = self
                    .relation_of(a)
                    .ok_or_else(|| format!("{} establishes no relation", a.name))?;
                self.state.held = None;
                self.state.attachments.insert(
                    part.clone(),
                    Attachment {
                        part,
                        relation,
                        base: target,
                    },
                );
            }
        }
        Ok(Vec::new())
    }

    /// Checks a disturbance against the kind invariants in the current state.
    pub fn check_disturbance(&self, kind: DisturbanceKind, p: &Payload) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidDisturbance(m));
        if !self.state.poses.contains_key(&p.object) {
            return bad(format!("unknown object {}", p.object));
        }
        if !p.displacement.iter().all(|d| d.is_finite()) {
            return bad("displacement must be finite".into());
        }
        let in_action = self.current_action().is_some_and(|a| a.involves(&p.object));
        match kind {
            DisturbanceKind::I if !in_action => bad(format!(
                "kind I needs an object of the current action, {} is not one",
                p.object
            )),
            DisturbanceKind::II if in_action || self.involved.contains(&p.object) => bad(format!(
                "kind II needs an object no action has involved, {} has been",
                p.object
            )),
            DisturbanceKind::III => match (&p.detach_from, self.state.attachments.get(&p.object)) {
                (Some(base), Some(a)) if &a.base == base => Ok(()),
                (None, _) => bad("kind III needs `detach_from`".into()),
                (Some(base), _) => bad(format!("{} is not attached to {base}", p.object)),
            },
            _ if p.detach_from.is_some() => bad(format!("kind {kind} does not detach")),
            _ => Ok(()),
        }
    }

    /// Mutates ground truth. Returns the objects that moved.
    pub fn inject(
        &mut self,
        kind: DisturbanceKind,
        p: &Payload,
    ) -> Result<Vec<ObjectId>, SimError> {
        self.check_disturbance(kind, p)?;
        Ok(self
            .state
            .displace(&p.object, p.displacement[0], p.displacement[1]))
    }

    /// Truth positions as a tracking report.
    pub fn truth_position(&self, o: &ObjectId) -> Option<Position> {
        self.state.poses.get(o).map(Pose::position)
    }
}

impl ActionRuntime for SimEnv {
    fn poll(&mut self, action: &ActionInstance) -> ActionPoll {
        if let Some(f) = self.state.finished.iter().find(|f| &f.action == action) {
            return match &f.outcome {
                Ok(obs) => ActionPoll::Succeeded(obs.clone()),
                Err(reason) => ActionPoll::Failed(reason.clone()),
            };
        }
        if self.current_action() == Some(action) {
            ActionPoll::Running
        } else if self.state.suspended.contains_key(action) {
            ActionPoll::Suspended
        } else {
            ActionPoll::Idle
        }
    }

    fn start(&mut self, action: &ActionInstance, belief: &WorldState) -> Result<(), String> {
        self.start_action(action, belief).map_err(|e| match e {
            SimError::PhysicalPreconditionFailure { reason, .. } => reason,
            other => other.to_string(),
        })
    }

    fn suspend(&mut self, action: &ActionInstance) {
        self.suspend_action(action);
    }

    fn acknowledge(&mut self, action: &ActionInstance) {
        self.state.finished.retain(|f| &f.action != action);
    }
}

#[cfg(test)]
mod tests;
