//! One pilot session: a simulator, a pipeline and its history, with at most
//! one plan executing at a time.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;
use tokio::sync::{broadcast, oneshot, watch};

use tacos::coordinator::{CoordinatorError, TaskPlan};
use tacos::harness::{callsigns, spawn_positions};
use tacos::history::CoordinatorHistory;
use tacos::llm::{LlmBackend, RecordingBackend, Transcript};
use tacos::supervisor::{CycleRecord, ExecutionReport};
use tacos::{AblationMode, Pipeline, RawCall, SimConfig, SimHandle, Simulator, SwarmState, WorldState};

use crate::config::ServiceConfig;
use crate::live::LiveSim;

/// Pushed to telemetry subscribers alongside the snapshots.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Plan(PlanView),
    Cycle(CycleRecord),
    Report(ExecutionReport),
    Preempted { plan_id: String },
    Rejected { instruction: String, error: String },
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::Plan(_) => "plan",
            SessionEvent::Cycle(_) => "cycle",
            SessionEvent::Report(_) => "report",
            SessionEvent::Preempted { .. } => "preempted",
            SessionEvent::Rejected { .. } => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanView {
    pub plan_id: String,
    pub instruction: String,
    pub reasoning: String,
    pub calls: Vec<RawCall>,
    /// Calls as `alfa goto(1.00, 2.00, 3.00)`.
    pub rendered: Vec<String>,
}

impl From<&TaskPlan> for PlanView {
    fn from(p: &TaskPlan) -> Self {
        Self {
            plan_id: p.plan_id.clone(),
            instruction: p.source_instruction.text.clone(),
            reasoning: p.reasoning.clone(),
            calls: p.calls.iter().map(|c| c.to_raw()).collect(),
            rendered: p.calls.iter().map(|c| c.to_raw().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedCallView {
    pub index: usize,
    pub call: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "error")]
pub enum SubmitError {
    BusyWithPlan { active_plan: Option<String> },
    /// A newer instruction took over before this one was planned.
    Superseded,
    EmptyInstruction,
    ParseFailure { detail: String, attempts: usize, model_output: String },
    ValidationFailure { reasoning: String, rejected: Vec<RejectedCallView> },
    BackendError { detail: String },
    Internal { detail: String },
}

impl From<CoordinatorError> for SubmitError {
    fn from(e: CoordinatorError) -> Self {
        match e {
            CoordinatorError::EmptyInstruction => SubmitError::EmptyInstruction,
            CoordinatorError::ParseFailure { attempts, error, output } => {
                SubmitError::ParseFailure { detail: error.to_string(), attempts, model_output: output }
            }
            CoordinatorError::ValidationFailure { reasoning, rejected } => SubmitError::ValidationFailure {
                reasoning,
                rejected: rejected
                    .into_iter()
                    .map(|(index, call, error)| RejectedCallView { index, call: call.to_string(), error: error.to_string() })
                    .collect(),
            },
            CoordinatorError::Backend(b) => SubmitError::BackendError { detail: b.to_string() },
            CoordinatorError::History(h) => SubmitError::Internal { detail: h.to_string() },
        }
    }
}

impl std::fmt::Display for SubmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubmitError::BusyWithPlan { active_plan } => {
                write!(f, "busy with {}", active_plan.as_deref().unwrap_or("a pending instruction"))
            }
            SubmitError::Superseded => write!(f, "superseded by a newer instruction"),
            SubmitError::EmptyInstruction => write!(f, "instruction is empty"),
            SubmitError::ParseFailure { detail, attempts, .. } => write!(f, "unparsable after {attempts} attempts: {detail}"),
            SubmitError::ValidationFailure { rejected, .. } => write!(f, "{} call(s) rejected", rejected.len()),
            SubmitError::BackendError { detail } | SubmitError::Internal { detail } => f.write_str(detail),
        }
    }
}

struct Core {
    pipeline: Pipeline,
    sim: LiveSim,
}

#[derive(Default)]
struct Status {
    /// Token of the instruction that currently owns the session.
    owner: Option<u64>,
    issued: u64,
    executing: Option<String>,
    plan: Option<TaskPlan>,
    report: Option<ExecutionReport>,
    history: Option<CoordinatorHistory>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateView {
    pub id: String,
    pub scenario: String,
    pub mode: AblationMode,
    pub busy: bool,
    pub active_plan: Option<String>,
    pub history_entries: usize,
    pub sim_time: f64,
    pub swarm: SwarmState,
    /// Same rendering the models see.
    pub text: String,
}

pub struct Session {
    pub id: String,
    pub scenario: String,
    pub mode: AblationMode,
    world: Arc<WorldState>,
    core: Mutex<Core>,
    status: Mutex<Status>,
    telemetry: watch::Sender<Arc<SwarmState>>,
    events: broadcast::Sender<SessionEvent>,
    cancel: Arc<AtomicBool>,
    recorder: Arc<RecordingBackend>,
    transcript_path: Option<PathBuf>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
pub struct SessionOptions {
    pub swarm_size: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<AblationMode>,
}

impl Session {
    pub fn new(id: String, cfg: &ServiceConfig, opts: &SessionOptions) -> Result<Arc<Self>, String> {
        let size = opts.swarm_size.unwrap_or(cfg.swarm_size);
        if size == 0 || size > tacos::swarm::CALLSIGNS.len() {
            return Err(format!("swarm_size must be 1..={}", tacos::swarm::CALLSIGNS.len()));
        }
        let mode = opts.mode.unwrap_or(cfg.mode);
        let world = cfg.world.clone();
        let spawns = spawn_positions(&world, size, opts.seed.unwrap_or(cfg.seed), 0);
        let mut sim_cfg = SimConfig::new(spawns);
        sim_cfg.seed = opts.seed.unwrap_or(cfg.seed);
        let sim = Simulator::new(world.clone(), sim_cfg).map_err(|e| e.to_string())?;
        let backend = cfg.backend.build(&world, &callsigns(size))?;
        let recorder = Arc::new(RecordingBackend::new(backend));
        let pipeline = Pipeline::new(recorder.clone() as Arc<dyn LlmBackend>, &world, cfg.pipeline_config(mode));

        let (telemetry, _) = watch::channel(Arc::new(sim.swarm().clone()));
        let (events, _) = broadcast::channel(256);
        let cancel = Arc::new(AtomicBool::new(false));
        let sim = LiveSim::new(sim, telemetry.clone(), cancel.clone(), cfg.time_scale);
        let status = Status { history: pipeline.history().cloned(), ..Status::default() };
        Ok(Arc::new(Self {
            transcript_path: cfg.transcript_dir.as_ref().map(|d| d.join(format!("{id}.jsonl"))),
            id,
            scenario: cfg.scenario.clone(),
            mode,
            world,
            core: Mutex::new(Core { pipeline, sim }),
            status: Mutex::new(status),
            telemetry,
            events,
            cancel,
            recorder,
        }))
    }

    pub fn world(&self) -> &Arc<WorldState> {
        &self.world
    }

    pub fn telemetry(&self) -> watch::Receiver<Arc<SwarmState>> {
        self.telemetry.subscribe()
    }

    pub fn events(&self) -> broadcast::Receiver<SessionEvent> {
        self.events.subscribe()
    }

    pub fn state(&self) -> StateView {
        let swarm = (**self.telemetry.borrow()).clone();
        let st = lock(&self.status);
        StateView {
            id: self.id.clone(),
            scenario: self.scenario.clone(),
            mode: self.mode,
            busy: st.owner.is_some(),
            active_plan: st.executing.clone(),
            history_entries: st.history.as_ref().map_or(0, |h| h.len()),
            sim_time: swarm.sim_time,
            text: swarm.render(),
            swarm,
        }
    }

    /// Latest plan, executing or finished.
    pub fn plan(&self) -> Option<PlanView> {
        lock(&self.status).plan.as_ref().map(PlanView::from)
    }

    pub fn report(&self) -> Option<ExecutionReport> {
        lock(&self.status).report.clone()
    }

    /// `None` in the merged-agent mode, which keeps its history in the dialogue.
    pub fn history(&self) -> Option<CoordinatorHistory> {
        lock(&self.status).history.clone()
    }

    pub fn transcript(&self) -> Transcript {
        self.recorder.transcript()
    }

    /// Plans `text` and starts executing it in the background. Returns once
    /// the plan exists (or was rejected); execution continues afterwards.
    pub async fn submit(self: &Arc<Self>, text: String, preempt: bool) -> Result<PlanView, SubmitError> {
        let token = {
            let mut st = lock(&self.status);
            if st.owner.is_some() {
                if !preempt {
                    return Err(SubmitError::BusyWithPlan { active_plan: st.executing.clone() });
                }
                tracing::info!(session = %self.id, plan = ?st.executing, "preempting");
                self.cancel.store(true, Ordering::SeqCst);
            }
            st.issued += 1;
            st.owner = Some(st.issued);
            st.issued
        };
        let (tx, rx) = oneshot::channel();
        let me = self.clone();
        tokio::task::spawn_blocking(move || me.run_instruction(token, text, tx));
        rx.await.unwrap_or_else(|_| Err(SubmitError::Internal { detail: "instruction task ended early".into() }))
    }

    fn release(&self, token: u64) {
        let mut st = lock(&self.status);
        if st.owner == Some(token) {
            st.owner = None;
            st.executing = None;
        }
    }

    fn emit(&self, e: SessionEvent) {
        // no subscribers is fine
        let _ = self.events.send(e);
    }

    fn save_transcript(&self) {
        if let Some(path) = &self.transcript_path {
            if let Err(e) = self.recorder.transcript().save(path) {
                tracing::warn!(session = %self.id, "transcript not written: {e}");
            }
        }
    }

    fn run_instruction(&self, token: u64, text: String, reply: oneshot::Sender<Result<PlanView, SubmitError>>) {
        let mut core = lock(&self.core);
        {
            let st = lock(&self.status);
            if st.owner != Some(token) {
                let _ = reply.send(Err(SubmitError::Superseded));
                return;
            }
            self.cancel.store(false, Ordering::SeqCst);
        }
        let Core { pipeline, sim } = &mut *core;
        let swarm = sim.snapshot();
        let plan = match pipeline.plan(&text, &swarm, &self.world) {
            Ok(p) => p,
            Err(e) => {
                let err = SubmitError::from(e);
                self.emit(SessionEvent::Rejected { instruction: text, error: err.to_string() });
                self.release(token);
                self.save_transcript();
                let _ = reply.send(Err(err));
                return;
            }
        };
        let view = PlanView::from(&plan);
        {
            let mut st = lock(&self.status);
            st.plan = Some(plan.clone());
            st.executing = Some(plan.plan_id.clone());
            st.history = pipeline.history().cloned();
        }
        self.emit(SessionEvent::Plan(view.clone()));
        let _ = reply.send(Ok(view));

        let events = self.events.clone();
        let report = pipeline.execute_observed(&plan, sim, &mut |rec| {
            let _ = events.send(SessionEvent::Cycle(rec.clone()));
        });
        if report.failure.as_deref() == Some("Preempted") {
            self.emit(SessionEvent::Preempted { plan_id: plan.plan_id.clone() });
        }
        {
            let mut st = lock(&self.status);
            st.report = Some(report.clone());
            st.history = pipeline.history().cloned();
        }
        self.release(token);
        self.emit(SessionEvent::Report(report));
        self.save_transcript();
    }

    /// Full trace so far; waits for any running plan to finish.
    pub fn trace_jsonl(&self) -> String {
        let core = lock(&self.core);
        let mut out = Vec::new();
        core.sim.simulator().trace().write_jsonl(&mut out).expect("in-memory write");
        String::from_utf8(out).expect("trace is utf-8")
    }
}
