use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use asmbt_core::atom::ObjectId;
use asmbt_core::executor::{
    Event, ExecError, ExecutionConfig, ExecutionTrace, FallbackReplanner, GatedReplanner,
    Replanner, Run, RunMetrics, Scenario,
};
use asmbt_core::fixtures;
use asmbt_core::planner::{
    generate_plan, BackendSpec, DemonstrationTranscript, Fault, FaultPlan, PlanBundle, PlanConfig,
    PlanError, ReviewGate, ReviewItem, Verdict,
};
use asmbt_core::sim::{DisturbanceKind, Payload, SimEnv, WorkcellDoc};
use asmbt_core::world::{Domain, SetupDoc, WorldState};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    AwaitingReview,
    Executing,
    Finished,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Planning => "planning",
            Phase::AwaitingReview => "awaiting_review",
            Phase::Executing => "executing",
            Phase::Finished => "finished",
        })
    }
}

fn default_backend() -> BackendSpec {
    BackendSpec::Rule
}

fn yes() -> bool {
    true
}

/// Body of a session creation request. Setup and workcell default to the
/// bundled gearset documents.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub transcript: Value,
    #[serde(default)]
    pub setup: Option<SetupDoc>,
    #[serde(default)]
    pub workcell: Option<WorkcellDoc>,
    #[serde(default = "default_backend")]
    pub backend: BackendSpec,
    /// Scripted faults injected into first backend replies.
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub max_rounds: Option<u32>,
    /// Route every generated artifact through the review endpoints. When
    /// false everything is approved automatically.
    #[serde(default = "yes")]
    pub review: bool,
    /// Route replanned subtrees through the replan review endpoints.
    #[serde(default)]
    pub approve_replans: bool,
    /// Start this scenario as soon as the plan is approved.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub exec: ExecutionConfig,
    /// Wall-clock pause between ticks; defaults to the service setting.
    #[serde(default)]
    pub tick_delay_ms: Option<u64>,
}

/// A disturbance posted to a running session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceRequest {
    pub kind: DisturbanceKind,
    pub payload: Payload,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Events kept per session before the run is aborted.
    pub event_capacity: usize,
    pub tick_delay_ms: u64,
    /// Plans and event logs are appended here per session when set.
    pub data_dir: Option<PathBuf>,
    /// Longest a review post waits for the pipeline to settle.
    pub settle_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            event_capacity: 100_000,
            tick_delay_ms: 0,
            data_dir: None,
            settle_timeout: Duration::from_secs(30),
        }
    }
}

/// Event-stream message: a trace event with its sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<StreamMessage>,
    /// Sequence number to ask for next.
    pub next: u64,
    /// No further events will arrive.
    pub closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub phase: Phase,
    pub plan_ready: bool,
    pub review_pending: bool,
    pub replan_review_pending: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    pub events: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub finished: bool,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetachOption {
    pub object: ObjectId,
    pub detach_from: ObjectId,
}

/// Objects each disturbance kind can currently be applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceOptions {
    #[serde(rename = "I")]
    pub kind_i: Vec<ObjectId>,
    #[serde(rename = "II")]
    pub kind_ii: Vec<ObjectId>,
    #[serde(rename = "III")]
    pub kind_iii: Vec<DetachOption>,
}

#[derive(Default)]
struct State {
    phase: Option<Phase>,
    pending: Option<ReviewItem>,
    reviews: u64,
    verdicts: Option<Sender<Verdict>>,
    replan_pending: Option<ReviewItem>,
    replan_verdicts: Option<Sender<Verdict>>,
    plan: Option<Arc<PlanBundle>>,
    error: Option<ApiError>,
    run: Option<Arc<Mutex<Run>>>,
}

impl State {
    fn phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Planning)
    }
}

#[derive(Default)]
struct EventLog {
    events: Vec<Event>,
    closed: bool,
    overflow: bool,
}

struct Settings {
    workcell: WorkcellDoc,
    domain: Arc<Domain>,
    exec: ExecutionConfig,
    approve_replans: bool,
    tick_delay: Duration,
    capacity: usize,
    dir: Option<PathBuf>,
}

pub struct Session {
    id: String,
    settings: Settings,
    state: Mutex<State>,
    changed: Condvar,
    log: Mutex<EventLog>,
    logged: Condvar,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Session {
    fn state(&self) -> MutexGuard<'_, State> {
        lock(&self.state)
    }

    fn update(&self, f: impl FnOnce(&mut State)) {
        f(&mut self.state());
        self.changed.notify_all();
    }

    fn persist(&self, name: &str, text: &str, append: bool) {
        let Some(dir) = &self.settings.dir else {
            return;
        };
        if fs::create_dir_all(dir).is_err() {
            return;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(dir.join(name));
        if let Ok(mut f) = file {
            let _ = f.write_all(text.as_bytes());
        }
    }

    /// Appends events, refusing the whole batch when it would not fit. The
    /// log stays open until the run is marked finished.
    fn push_events(&self, batch: &[Event]) -> bool {
        let mut log = lock(&self.log);
        if log.events.len() + batch.len() > self.settings.capacity {
            log.overflow = true;
            return false;
        }
        log.events.extend_from_slice(batch);
        drop(log);
        self.logged.notify_all();
        if self.settings.dir.is_some() && !batch.is_empty() {
            let lines: String = batch
                .iter()
                .filter_map(|e| serde_json::to_string(e).ok())
                .map(|l| l + "\n")
                .collect();
            self.persist("events.jsonl", &lines, true);
        }
        true
    }

    fn close_events(&self) {
        lock(&self.log).closed = true;
        self.logged.notify_all();
    }
}

/// Blocks the pipeline or the executor on a verdict posted to the session.
struct SessionGate {
    session: Arc<Session>,
    verdicts: Receiver<Verdict>,
    replan: bool,
}

impl ReviewGate for SessionGate {
    fn review(&mut self, item: &ReviewItem) -> Result<Verdict, PlanError> {
        let replan = self.replan;
        self.session.update(|st| {
            if replan {
                st.replan_pending = Some(item.clone());
            } else {
                st.phase = Some(Phase::AwaitingReview);
                st.pending = Some(item.clone());
            }
            st.reviews += 1;
        });
        let verdict = self
            .verdicts
            .recv()
            .map_err(|_| PlanError::ReviewAborted("session closed".into()));
        self.session.update(|st| {
            if replan {
                st.replan_pending = None;
            } else if st.phase() == Phase::AwaitingReview {
                st.phase = Some(Phase::Planning);
                st.pending = None;
            }
        });
        verdict
    }
}

/// In-memory session registry.
pub struct Service {
    cfg: ServiceConfig,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    next: AtomicU64,
}

impl Service {
    pub fn new(cfg: ServiceConfig) -> Self {
        Self {
            cfg,
            sessions: Mutex::new(BTreeMap::new()),
            next: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_owned()))
    }

    pub fn list(&self) -> Vec<SessionStatus> {
        let sessions: Vec<Arc<Session>> = lock(&self.sessions).values().cloned().collect();
        sessions.iter().map(|s| status_of(s)).collect()
    }

    /// Validates the documents and starts the planning pipeline.
    pub fn create_session(&self, req: CreateSession) -> Result<SessionStatus, ApiError> {
        let transcript: DemonstrationTranscript = serde_json::from_value(req.transcript)
            .map_err(|e| ApiError::InvalidDocument(format!("transcript: {e}")))?;
        transcript
            .validate()
            .map_err(|e| ApiError::InvalidDocument(format!("transcript: {e}")))?;
        let setup = match req.setup {
            Some(s) => s,
            None => SetupDoc::from_json(fixtures::SETUP)
                .map_err(|e| ApiError::Internal(e.to_string()))?,
        };
        let workcell = match req.workcell {
            Some(w) => w,
            None => WorkcellDoc::from_json(fixtures::WORKCELL)
                .map_err(|e| ApiError::Internal(e.to_string()))?,
        };
        req.exec
            .validate()
            .map_err(|e| ApiError::InvalidDocument(format!("exec: {e}")))?;
        if let Some(sc) = &req.scenario {
            sc.perception_noise
                .validate()
                .map_err(|e| ApiError::InvalidDocument(format!("scenario: {e}")))?;
        }
        let domain = Arc::new(Domain::gearset());
        let id = format!("s{}", self.next.fetch_add(1, Ordering::SeqCst));
        let session = Arc::new(Session {
            id: id.clone(),
            settings: Settings {
                workcell,
                domain: domain.clone(),
                exec: req.exec,
                approve_replans: req.approve_replans,
                tick_delay: Duration::from_millis(
                    req.tick_delay_ms.unwrap_or(self.cfg.tick_delay_ms),
                ),
                capacity: self.cfg.event_capacity,
                dir: self.cfg.data_dir.as_ref().map(|d| d.join(&id)),
            },
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
            log: Mutex::new(EventLog::default()),
            logged: Condvar::new(),
        });
        lock(&self.sessions).insert(id, session.clone());

        let faults = (!req.faults.is_empty()).then(|| FaultPlan::Scripted(req.faults.clone()));
        let mut backend = req.backend.build_with_faults(faults);
        let mut gate: Box<dyn ReviewGate> = if req.review {
            let (tx, rx) = channel();
            session.state().verdicts = Some(tx);
            Box::new(SessionGate {
                session: session.clone(),
                verdicts: rx,
                replan: false,
            })
        } else {
            Box::new(asmbt_core::planner::AutoApprove)
        };
        let mut plan_cfg = PlanConfig::default();
        if let Some(r) = req.max_rounds {
            plan_cfg.max_rounds = r;
        }
        let scenario = req.scenario;
        let worker = session.clone();
        thread::spawn(move || {
            let result = generate_plan(
                &transcript,
                &setup,
                domain,
                backend.as_mut(),
                gate.as_mut(),
                &plan_cfg,
            );
            drop(gate);
            match result {
                Ok(bundle) => {
                    if let Ok(text) = serde_json::to_string_pretty(&bundle) {
                        worker.persist("plan.json", &text, false);
                    }
                    worker.update(|st| st.plan = Some(Arc::new(bundle)));
                    if let Some(sc) = scenario {
                        if let Err(e) = start(&worker, sc) {
                            worker.update(|st| {
                                st.error = Some(e);
                                st.phase = Some(Phase::Finished);
                            });
                            worker.close_events();
                        }
                    }
                }
                Err(e) => {
                    worker.update(|st| {
                        st.error = Some(ApiError::from(&e));
                        st.phase = Some(Phase::Finished);
                    });
                    worker.close_events();
                }
            }
        });
        Ok(status_of(&session))
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus, ApiError> {
        Ok(status_of(&*self.session(id)?))
    }

    /// Blocks until the session leaves `phase`-independent transient states:
    /// a review is pending, the plan is ready, or the session moved on.
    pub fn wait_settled(&self, id: &str, timeout: Duration) -> Result<SessionStatus, ApiError> {
        let s = self.session(id)?;
        let deadline = Instant::now() + timeout;
        let mut st = s.state();
        while st.phase() == Phase::Planning && st.plan.is_none() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            st = s
                .changed
                .wait_timeout(st, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        drop(st);
        Ok(status_of(&s))
    }

    pub fn pending_review(&self, id: &str) -> Result<ReviewItem, ApiError> {
        let s = self.session(id)?;
        let st = s.state();
        match (&st.pending, st.phase()) {
            (Some(item), Phase::AwaitingReview) => Ok(item.clone()),
            (_, phase) => Err(ApiError::wrong_phase("awaiting_review", phase)),
        }
    }

    /// Delivers a verdict and waits for the pipeline to reach its next
    /// review, finish planning or fail. A pipeline failure caused by the
    /// verdict is returned as the error.
    pub fn post_review(&self, id: &str, verdict: Verdict) -> Result<SessionStatus, ApiError> {
        let s = self.session(id)?;
        let mut st = s.state();
        if st.phase() != Phase::AwaitingReview {
            return Err(ApiError::wrong_phase("awaiting_review", st.phase()));
        }
        let before = st.reviews;
        let tx = st
            .verdicts
            .clone()
            .ok_or_else(|| ApiError::Internal("no reviewer channel".into()))?;
        st.phase = Some(Phase::Planning);
        st.pending = None;
        tx.send(verdict)
            .map_err(|_| ApiError::Internal("planning pipeline stopped".into()))?;
        let deadline = Instant::now() + self.cfg.settle_timeout;
        while st.reviews == before && st.plan.is_none() && st.phase() == Phase::Planning {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            st = s
                .changed
                .wait_timeout(st, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        if st.phase() == Phase::Finished && st.plan.is_none() {
            if let Some(e) = &st.error {
                return Err(e.clone());
            }
        }
        drop(st);
        Ok(status_of(&s))
    }

    pub fn plan(&self, id: &str) -> Result<Arc<PlanBundle>, ApiError> {
        let s = self.session(id)?;
        let st = s.state();
        st.plan
            .clone()
            .ok_or_else(|| ApiError::wrong_phase("plan ready", st.phase()))
    }

    pub fn start_run(&self, id: &str, scenario: Scenario) -> Result<SessionStatus, ApiError> {
        let s = self.session(id)?;
        start(&s, scenario)?;
        Ok(status_of(&s))
    }

    fn run_of(&self, id: &str) -> Result<(Arc<Session>, Arc<Mutex<Run>>), ApiError> {
        let s = self.session(id)?;
        let st = s.state();
        let run = st
            .run
            .clone()
            .ok_or_else(|| ApiError::wrong_phase("executing", st.phase()))?;
        drop(st);
        Ok((s, run))
    }

    pub fn post_disturbance(
        &self,
        id: &str,
        d: DisturbanceRequest,
    ) -> Result<SessionStatus, ApiError> {
        let s = self.session(id)?;
        let st = s.state();
        if st.phase() != Phase::Executing {
            return Err(ApiError::wrong_phase("executing", st.phase()));
        }
        if st.replan_pending.is_some() {
            return Err(ApiError::wrong_phase(
                "executing without a pending replan review",
                st.phase(),
            ));
        }
        let run = st
            .run
            .clone()
            .ok_or_else(|| ApiError::Internal("executing without a run".into()))?;
        drop(st);
        let result = lock(&run).inject(d.kind, d.payload);
        match result {
            Ok(()) => Ok(status_of(&s)),
            Err(ExecError::Finished) => Err(ApiError::wrong_phase("executing", Phase::Finished)),
            Err(ExecError::Sim(e)) => Err(ApiError::InvalidDisturbance(e.to_string())),
            Err(e) => Err(ApiError::Internal(e.to_string())),
        }
    }

    pub fn disturbance_options(&self, id: &str) -> Result<DisturbanceOptions, ApiError> {
        let (_, run) = self.run_of(id)?;
        let run = lock(&run);
        let env = run.env();
        let probe = [0.05, 0.0];
        let fits = |kind, object: &ObjectId, detach_from: Option<ObjectId>| {
            env.check_disturbance(
                kind,
                &Payload {
                    object: object.clone(),
                    displacement: probe,
                    detach_from,
                },
            )
            .is_ok()
        };
        let objects: Vec<ObjectId> = env.objects().cloned().collect();
        Ok(DisturbanceOptions {
            kind_i: objects
                .iter()
                .filter(|o| fits(DisturbanceKind::I, o, None))
                .cloned()
                .collect(),
            kind_ii: objects
                .iter()
                .filter(|o| fits(DisturbanceKind::II, o, None))
                .cloned()
                .collect(),
            kind_iii: env
                .state()
                .attachments
                .values()
                .filter(|a| fits(DisturbanceKind::III, &a.part, Some(a.base.clone())))
                .map(|a| DetachOption {
                    object: a.part.clone(),
                    detach_from: a.base.clone(),
                })
                .collect(),
        })
    }

    pub fn pending_replan(&self, id: &str) -> Result<ReviewItem, ApiError> {
        let s = self.session(id)?;
        let st = s.state();
        st.replan_pending
            .clone()
            .ok_or_else(|| ApiError::wrong_phase("awaiting replan review", st.phase()))
    }

    pub fn post_replan_review(
        &self,
        id: &str,
        verdict: Verdict,
    ) -> Result<SessionStatus, ApiError> {
        let s = self.session(id)?;
        let mut st = s.state();
        if st.replan_pending.take().is_none() {
            return Err(ApiError::wrong_phase("awaiting replan review", st.phase()));
        }
        let tx = st
            .replan_verdicts
            .clone()
            .ok_or_else(|| ApiError::Internal("no replan reviewer channel".into()))?;
        drop(st);
        tx.send(verdict)
            .map_err(|_| ApiError::Internal("run stopped".into()))?;
        Ok(status_of(&s))
    }

    /// Events from sequence number `from`, waiting up to `wait` for at
    /// least one when none are available yet.
    pub fn events(&self, id: &str, from: u64, wait: Duration) -> Result<EventPage, ApiError> {
        let s = self.session(id)?;
        let deadline = Instant::now() + wait;
        let mut log = lock(&s.log);
        while log.events.len() as u64 <= from && !log.closed {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            log = s
                .logged
                .wait_timeout(log, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        let start = (from as usize).min(log.events.len());
        let events: Vec<StreamMessage> = log.events[start..]
            .iter()
            .enumerate()
            .map(|(k, e)| StreamMessage {
                seq: (start + k) as u64,
                event: e.clone(),
            })
            .collect();
        let next = log.events.len() as u64;
        let closed = log.closed && from + events.len() as u64 >= next;
        let error = log
            .overflow
            .then(|| ApiError::Overflow(s.settings.capacity).envelope());
        Ok(EventPage {
            events,
            next: next.max(from),
            closed,
            error,
        })
    }

    pub fn metrics(&self, id: &str) -> Result<MetricsReport, ApiError> {
        let (_, run) = self.run_of(id)?;
        let run = lock(&run);
        Ok(MetricsReport {
            finished: run.is_finished(),
            metrics: run.metrics(),
        })
    }

    pub fn trace(&self, id: &str) -> Result<ExecutionTrace, ApiError> {
        let (_, run) = self.run_of(id)?;
        let trace = lock(&run).trace().clone();
        Ok(trace)
    }

    /// Current belief during a run, the initial state of the plan before.
    pub fn belief(&self, id: &str) -> Result<WorldState, ApiError> {
        let s = self.session(id)?;
        let st = s.state();
        if let Some(run) = st.run.clone() {
            drop(st);
            let belief = lock(&run).belief().clone();
            return Ok(belief);
        }
        match &st.plan {
            Some(plan) => Ok(plan.initial_state().clone()),
            None => Err(ApiError::wrong_phase("plan ready", st.phase())),
        }
    }
}

fn status_of(s: &Session) -> SessionStatus {
    let st = s.state();
    let run = st.run.clone();
    let mut status = SessionStatus {
        id: s.id.clone(),
        phase: st.phase(),
        plan_ready: st.plan.is_some(),
        review_pending: st.pending.is_some(),
        replan_review_pending: st.replan_pending.is_some(),
        stage: None,
        events: 0,
        error: st.error.as_ref().map(|e| e.envelope()["error"].clone()),
    };
    let replan_pending = st.replan_pending.is_some();
    drop(st);
    if let Some(run) = run {
        // The executor holds the run while it waits for a replan verdict.
        if !replan_pending {
            if let Ok(run) = run.try_lock() {
                status.stage = Some(run.stage());
            }
        }
    }
    status.events = lock(&s.log).events.len() as u64;
    status
}

/// Starts executing the approved plan under `scenario`.
fn start(s: &Arc<Session>, scenario: Scenario) -> Result<(), ApiError> {
    let mut st = s.state();
    let plan = match (&st.plan, st.phase()) {
        (Some(plan), Phase::Planning) => plan.clone(),
        (_, phase) => {
            return Err(ApiError::wrong_phase(
                "planning with an approved plan",
                phase,
            ))
        }
    };
    if scenario.task_length != plan.len() {
        return Err(ApiError::InvalidDocument(format!(
            "scenario expects {} stages, plan has {}",
            scenario.task_length,
            plan.len()
        )));
    }
    let set = &s.settings;
    let exec = ExecutionConfig {
        seed: scenario.seed,
        ..set.exec
    };
    let env = SimEnv::new(
        &set.workcell,
        set.domain.clone(),
        scenario.perception_noise,
        exec.seed,
    )
    .map_err(|e| ApiError::InvalidDocument(e.to_string()))?
    .with_frequency(exec.frequency);
    let replanner: Box<dyn Replanner> = if set.approve_replans {
        let (tx, rx) = channel();
        st.replan_verdicts = Some(tx);
        Box::new(GatedReplanner::new(
            FallbackReplanner,
            Box::new(SessionGate {
                session: s.clone(),
                verdicts: rx,
                replan: true,
            }),
        ))
    } else {
        Box::new(FallbackReplanner)
    };
    let run = Run::new(&plan, env, scenario.disturbances, exec, replanner)
        .map_err(|e| ApiError::InvalidDocument(e.to_string()))?;
    let run = Arc::new(Mutex::new(run));
    st.run = Some(run.clone());
    st.phase = Some(Phase::Executing);
    drop(st);
    s.changed.notify_all();

    let worker = s.clone();
    thread::spawn(move || drive(worker, run));
    Ok(())
}

fn drive(s: Arc<Session>, run: Arc<Mutex<Run>>) {
    let mut cursor = 0;
    let mut failure = None;
    loop {
        let (step, batch) = {
            let mut r = lock(&run);
            let step = r.step();
            let batch = r.trace().events[cursor..].to_vec();
            cursor = r.trace().events.len();
            (step, batch)
        };
        if !s.push_events(&batch) {
            failure = Some(ApiError::Overflow(s.settings.capacity));
            break;
        }
        match step {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                failure = Some(ApiError::Internal(e.to_string()));
                break;
            }
        }
        if !s.settings.tick_delay.is_zero() {
            thread::sleep(s.settings.tick_delay);
        }
    }
    if let Ok(text) = serde_json::to_string_pretty(lock(&run).trace()) {
        s.persist("trace.json", &text, false);
    }
    s.update(|st| {
        st.phase = Some(Phase::Finished);
        if failure.is_some() {
            st.error = failure;
        }
    });
    s.close_events();
}
