//! Lower tier: closed-loop execution of a plan. Each cycle the model sees
//! the plan, (optionally) the Coordinator's reasoning, its own record of
//! issued commands and fresh telemetry, and decides what to issue next.
//!
//! Output grammar:
//!
//! ```text
//! NOTE: <one line>
//! ISSUE: [{"uav": "alfa", "action": "arm_takeoff", "args": []}]
//! DONE: false
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{validate_call, ActionCall, ActionRegistry, CallOrigin, RawCall, ValidationError};
use crate::coordinator::{parse_call_array, render_call_array, sections, ParseError, TaskPlan};
use crate::llm::{AgentHandle, AskError, BackendError};
use crate::planner::all_goals_reached;
use crate::simulator::{DispatchOutcome, SimHandle};
use crate::swarm::{Phase, SwarmState};
use crate::world::{Vec3, WorldState};

pub const DEFAULT_CYCLE_PERIOD: f64 = 10.0;
pub const DEFAULT_L_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisorConfig {
    /// Simulated seconds between cycles.
    pub cycle_period: f64,
    /// Most cycles one plan may use.
    pub l_max: usize,
    /// End a cycle early once every UAV has reached its goal.
    pub wake_when_idle: bool,
    /// Show the Coordinator's reasoning in cycle prompts.
    pub include_reasoning: bool,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self { cycle_period: DEFAULT_CYCLE_PERIOD, l_max: DEFAULT_L_MAX, wake_when_idle: true, include_reasoning: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Accepted,
    Rejected(String),
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedCall {
    pub cycle: usize,
    pub call: ActionCall,
    pub outcome: CallOutcome,
}

/// Per-plan record of what this Supervisor has issued. Cleared when the
/// plan starts and when it ends.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScopedMemory {
    pub plan_id: String,
    pub issued: Vec<IssuedCall>,
    pub cycle_index: usize,
}

impl ScopedMemory {
    pub fn new(plan_id: impl Into<String>) -> Self {
        Self { plan_id: plan_id.into(), issued: Vec::new(), cycle_index: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.issued.is_empty() && self.cycle_index == 0
    }

    pub fn clear(&mut self) {
        self.issued.clear();
        self.cycle_index = 0;
    }

    pub fn render(&self) -> String {
        if self.issued.is_empty() {
            return "  (nothing issued yet)\n".into();
        }
        self.issued
            .iter()
            .map(|i| {
                let outcome = match &i.outcome {
                    CallOutcome::Accepted => "accepted, in progress".to_string(),
                    CallOutcome::Rejected(r) => format!("rejected: {r}"),
                    CallOutcome::Completed => "completed".to_string(),
                };
                format!("  cycle {}: {} -> {}\n", i.cycle, i.call, outcome)
            })
            .collect()
    }

    fn has_completed(&self, call: &ActionCall) -> bool {
        self.issued.iter().any(|i| i.outcome == CallOutcome::Completed && i.call.same_command(call))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCall {
    pub call: RawCall,
    pub error: ValidationError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDecision {
    pub issue: Vec<ActionCall>,
    pub done: bool,
    pub note: String,
    /// Calls the model emitted that failed validation; never dispatched.
    pub rejected: Vec<RejectedCall>,
}

/// Parsed model output before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorOutput {
    pub note: String,
    pub issue: Vec<RawCall>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionParseError {
    #[error("no DONE line")]
    MissingDone,
    #[error("DONE must be true or false, got {0:?}")]
    BadDone(String),
    #[error("no ISSUE array")]
    MissingIssue,
    #[error("DONE: true with a non-empty ISSUE")]
    DoneWithIssue,
    #[error("issue entry {index} is malformed: {detail}")]
    MalformedCall { index: usize, detail: String },
}

pub fn parse_decision(text: &str) -> Result<SupervisorOutput, DecisionParseError> {
    let secs = sections(text, &["NOTE", "ISSUE", "DONE"]);
    let get = |l: &str| secs.iter().find(|(n, _)| *n == l).map(|(_, b)| b.as_str());
    let done_text = get("DONE").ok_or(DecisionParseError::MissingDone)?;
    let word = done_text.split_whitespace().next().unwrap_or("").trim_matches(|c: char| !c.is_alphanumeric());
    let done = match word.to_ascii_lowercase().as_str() {
        "true" | "yes" => true,
        "false" | "no" => false,
        _ => return Err(DecisionParseError::BadDone(word.to_string())),
    };
    let issue = match get("ISSUE").map(parse_call_array) {
        Some(Ok(Some(calls))) => calls,
        Some(Err(ParseError::MalformedCall { index, detail })) => {
            return Err(DecisionParseError::MalformedCall { index, detail })
        }
        Some(Err(_)) | Some(Ok(None)) | None if done => Vec::new(),
        _ => return Err(DecisionParseError::MissingIssue),
    };
    if done && !issue.is_empty() {
        return Err(DecisionParseError::DoneWithIssue);
    }
    Ok(SupervisorOutput { note: get("NOTE").unwrap_or("").to_string(), issue, done })
}

pub fn render_decision(out: &SupervisorOutput) -> String {
    format!("NOTE: {}\nISSUE: {}\nDONE: {}\n", out.note, render_call_array(&out.issue).replace('\n', " "), out.done)
}

pub(crate) const SUPERVISOR_FORMAT: &str = "\
OUTPUT FORMAT
NOTE: <one line: what you issue now and why>
ISSUE: [{\"uav\": \"<callsign>\", \"action\": \"<action name>\", \"args\": [<numbers>]}, ...]
DONE: <true once every plan call is completed, otherwise false>
ISSUE may be [] when the right move is to wait. With DONE: true the ISSUE must be [].
";

/// Supervisor configuration prompt.
pub fn build_supervisor_prompt(api_doc: &str) -> String {
    format!(
        "You are the Supervisor of a UAV swarm. The Coordinator has turned a pilot instruction into a task plan \
         of atomic calls plus reasoning that explains it. The plan says what must happen, not when. You run in \
         cycles: each cycle you receive the plan, the reasoning, your record of the calls you issued for this \
         plan, and fresh telemetry, and you decide which calls to issue now.\n\n\
         RULES\n\
         - Respect every ordering or waiting condition stated in the reasoning. Issue a call only once the \
         telemetry shows its preconditions hold.\n\
         - Never re-issue a call your record shows as accepted or completed unless the telemetry shows it failed.\n\
         - A UAV must be Grounded for arm_takeoff and Hovering or Navigating for goto.\n\
         - Declare DONE only when every call of the plan is completed.\n\n\
         {SUPERVISOR_FORMAT}\n{api_doc}"
    )
}

/// The per-cycle user message; its last line is always `CYCLE: <k>`.
pub fn render_cycle_message(plan: &TaskPlan, include_reasoning: bool, mem: &ScopedMemory, swarm: &SwarmState) -> String {
    let reasoning = if include_reasoning { plan.reasoning.as_str() } else { "(withheld)" };
    format!(
        "PLAN {}:\n{}COORDINATOR REASONING:\n{}\nSUPERVISOR RECORD:\n{}SWARM TELEMETRY:\n{}CYCLE: {}",
        plan.plan_id,
        plan.render_calls(),
        reasoning,
        mem.render(),
        swarm.render(),
        mem.cycle_index
    )
}

#[derive(Debug, Error)]
pub enum SupervisorError {
    #[error("memory belongs to {memory}, plan is {plan}")]
    PlanMismatch { memory: String, plan: String },
    #[error("cycle budget of {0} exhausted")]
    CycleBudgetExceeded(usize),
    #[error(transparent)]
    Backend(BackendError),
    #[error("supervisor output unparsable after {attempts} attempts: {error}")]
    ParseFailure { attempts: usize, error: DecisionParseError, output: String },
}

impl From<AskError<DecisionParseError>> for SupervisorError {
    fn from(e: AskError<DecisionParseError>) -> Self {
        match e {
            AskError::Backend(b) => SupervisorError::Backend(b),
            AskError::Parse { attempts, error, output } => SupervisorError::ParseFailure { attempts, error, output },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub call: ActionCall,
    pub outcome: DispatchOutcome,
    pub in_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub sim_time: f64,
    pub note: String,
    pub done: bool,
    pub dispatched: Vec<DispatchRecord>,
    pub rejected: Vec<RejectedCall>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// The model declared DONE.
    SupervisorDone,
    /// Every plan call was observed completed and all goals reached.
    PlanExhausted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub plan_id: String,
    pub success: bool,
    pub completion: Completion,
    pub cycles_used: usize,
    pub failure: Option<String>,
    pub cycles: Vec<CycleRecord>,
    /// Calls issued that are not in the plan (allowed, but flagged).
    pub out_of_plan: usize,
    /// Calls re-issued after the same command had already completed.
    pub redundant_issues: usize,
    /// Simulation window covered by this execution.
    pub start_time: f64,
    pub end_time: f64,
    pub memory_empty_at_entry: bool,
    pub memory_empty_at_exit: bool,
}

impl ExecutionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct Supervisor {
    agent: AgentHandle,
    registry: ActionRegistry,
    cfg: SupervisorConfig,
}

impl Supervisor {
    pub fn new(agent: AgentHandle, registry: ActionRegistry, cfg: SupervisorConfig) -> Self {
        Self { agent, registry, cfg }
    }

    pub fn agent(&self) -> &AgentHandle {
        &self.agent
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut SupervisorConfig {
        &mut self.cfg
    }

    /// One consultation: prompt, parse, validate, record.
    pub fn run_cycle(
        &self,
        plan: &TaskPlan,
        swarm: &SwarmState,
        world: &WorldState,
        mut mem: ScopedMemory,
    ) -> Result<(CycleDecision, ScopedMemory), SupervisorError> {
        if mem.plan_id != plan.plan_id {
            return Err(SupervisorError::PlanMismatch { memory: mem.plan_id, plan: plan.plan_id.clone() });
        }
        if mem.cycle_index >= self.cfg.l_max {
            return Err(SupervisorError::CycleBudgetExceeded(self.cfg.l_max));
        }
        let msg = render_cycle_message(plan, self.cfg.include_reasoning, &mem, swarm);
        let out = self.agent.lock().expect("agent lock poisoned").ask(msg, parse_decision)?;
        let mut decision = CycleDecision { issue: Vec::new(), done: out.done, note: out.note, rejected: Vec::new() };
        for raw in out.issue {
            match validate_call(&raw, &self.registry, swarm, world, CallOrigin::SupervisorIssued) {
                Ok(call) => {
                    mem.issued.push(IssuedCall { cycle: mem.cycle_index, call: call.clone(), outcome: CallOutcome::Accepted });
                    decision.issue.push(call);
                }
                Err(error) => {
                    if let Ok(call) = as_unchecked(&raw) {
                        mem.issued.push(IssuedCall {
                            cycle: mem.cycle_index,
                            call,
                            outcome: CallOutcome::Rejected(error.to_string()),
                        });
                    }
                    decision.rejected.push(RejectedCall { call: raw, error });
                }
            }
        }
        mem.cycle_index += 1;
        Ok((decision, mem))
    }

    pub fn execute_plan(&self, plan: &TaskPlan, sim: &mut dyn SimHandle) -> ExecutionReport {
        self.execute_plan_observed(plan, sim, &mut |_| {})
    }

    /// Runs `plan` to completion, failure or budget exhaustion, calling
    /// `observe` after each cycle's dispatches.
    pub fn execute_plan_observed(
        &self,
        plan: &TaskPlan,
        sim: &mut dyn SimHandle,
        observe: &mut dyn FnMut(&CycleRecord),
    ) -> ExecutionReport {
        let mut mem = ScopedMemory::new(plan.plan_id.clone());
        let start = sim.snapshot();
        let mut report = ExecutionReport {
            plan_id: plan.plan_id.clone(),
            success: false,
            completion: Completion::Failed,
            cycles_used: 0,
            failure: None,
            cycles: Vec::new(),
            out_of_plan: 0,
            redundant_issues: 0,
            start_time: start.sim_time,
            end_time: start.sim_time,
            memory_empty_at_entry: mem.is_empty(),
            memory_empty_at_exit: false,
        };
        let world = sim.world();
        loop {
            let swarm = sim.snapshot();
            if plan_exhausted(plan, &mem, &swarm) {
                report.success = true;
                report.completion = Completion::PlanExhausted;
                break;
            }
            if sim.interrupted() {
                report.failure = Some("Preempted".into());
                break;
            }
            let first_new = mem.issued.len();
            let (decision, next) = match self.run_cycle(plan, &swarm, &world, mem.clone()) {
                Ok(r) => r,
                Err(e) => {
                    report.failure = Some(e.to_string());
                    break;
                }
            };
            mem = next;
            report.cycles_used += 1;
            let mut record = CycleRecord {
                cycle: mem.cycle_index - 1,
                sim_time: swarm.sim_time,
                note: decision.note.clone(),
                done: decision.done,
                dispatched: Vec::new(),
                rejected: decision.rejected.clone(),
            };
            let mut permanent = None;
            for rejected in &decision.rejected {
                if let ValidationError::GoalInObstacle { .. } = rejected.error {
                    // let the simulator log it too
                    if let Ok(call) = as_unchecked(&rejected.call) {
                        sim.dispatch(&call);
                    }
                    permanent = Some(format!("GoalInObstacle: {}", rejected.call));
                }
            }
            for call in &decision.issue {
                let in_plan = plan.calls.iter().any(|c| c.same_command(call));
                if !in_plan {
                    report.out_of_plan += 1;
                }
                if mem.has_completed(call) {
                    report.redundant_issues += 1;
                }
                let outcome = sim.dispatch(call);
                if let DispatchOutcome::Rejected(reason) = &outcome {
                    if let Some(entry) = mem.issued[first_new..]
                        .iter_mut()
                        .find(|i| i.outcome == CallOutcome::Accepted && i.call.same_command(call))
                    {
                        entry.outcome = CallOutcome::Rejected(reason.clone());
                    }
                }
                record.dispatched.push(DispatchRecord { call: call.clone(), outcome, in_plan });
            }
            observe(&record);
            report.cycles.push(record);
            if let Some(reason) = permanent {
                report.failure = Some(reason);
                break;
            }
            if decision.done {
                report.success = true;
                report.completion = Completion::SupervisorDone;
                break;
            }
            let after = sim.run_for(self.cfg.cycle_period, self.cfg.wake_when_idle);
            mark_completed(&mut mem, &after);
        }
        report.end_time = sim.snapshot().sim_time;
        mem.clear();
        report.memory_empty_at_exit = mem.is_empty();
        report
    }
}

fn as_unchecked(raw: &RawCall) -> Result<ActionCall, ()> {
    if raw.uav.is_empty() {
        return Err(());
    }
    Ok(ActionCall {
        target_uav: raw.uav.as_str().into(),
        action: raw.action.clone(),
        args: raw.args.clone(),
        origin: CallOrigin::SupervisorIssued,
    })
}

const GOTO_ARRIVAL_SLACK: f64 = 0.5;

/// Marks each UAV's latest accepted call completed once telemetry shows it
/// finished: Hovering (at the target, for goto) or Grounded after land.
fn mark_completed(mem: &mut ScopedMemory, swarm: &SwarmState) {
    for u in &swarm.uavs {
        let Some(entry) = mem
            .issued
            .iter_mut()
            .rev()
            .find(|i| i.call.target_uav == u.id && !matches!(i.outcome, CallOutcome::Rejected(_)))
        else {
            continue;
        };
        if entry.outcome != CallOutcome::Accepted {
            continue;
        }
        let finished = match entry.call.action.as_str() {
            "arm_takeoff" => u.phase == Phase::Hovering,
            "goto" => {
                let a = &entry.call.args;
                u.phase == Phase::Hovering && u.position.distance(Vec3::new(a[0], a[1], a[2])) <= GOTO_ARRIVAL_SLACK
            }
            "land" => u.phase == Phase::Grounded,
            _ => false,
        };
        if finished {
            entry.outcome = CallOutcome::Completed;
        }
    }
}

/// True once every plan call has a completed record and no UAV has a goal.
pub fn plan_exhausted(plan: &TaskPlan, mem: &ScopedMemory, swarm: &SwarmState) -> bool {
    plan.calls.iter().all(|c| mem.has_completed(c)) && all_goals_reached(swarm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_grammar() {
        let d = parse_decision("NOTE: go\nISSUE: [{\"uav\":\"alfa\",\"action\":\"arm_takeoff\",\"args\":[]}]\nDONE: false").unwrap();
        assert_eq!((d.issue.len(), d.done), (1, false));
        let d = parse_decision("NOTE: all hovering\nDONE: true").unwrap();
        assert!(d.done && d.issue.is_empty());
        assert_eq!(parse_decision("NOTE: x\nISSUE: []"), Err(DecisionParseError::MissingDone));
        assert_eq!(parse_decision("DONE: false"), Err(DecisionParseError::MissingIssue));
        assert_eq!(parse_decision("DONE: maybe\nISSUE: []"), Err(DecisionParseError::BadDone("maybe".into())));
        assert_eq!(
            parse_decision("ISSUE: [{\"uav\":\"a\",\"action\":\"land\"}]\nDONE: true"),
            Err(DecisionParseError::DoneWithIssue)
        );
    }

    #[test]
    fn decision_round_trip() {
        let out = SupervisorOutput {
            note: "bravo waits".into(),
            issue: vec![RawCall { uav: "alfa".into(), action: "goto".into(), args: vec![1.5, -2.0, 3.25] }],
            done: false,
        };
        assert_eq!(parse_decision(&render_decision(&out)).unwrap(), out);
    }

    #[test]
    fn memory_render_and_clear() {
        let mut m = ScopedMemory::new("plan-0001");
        assert!(m.is_empty());
        m.issued.push(IssuedCall {
            cycle: 0,
            call: ActionCall { target_uav: "alfa".into(), action: "land".into(), args: vec![], origin: CallOrigin::SupervisorIssued },
            outcome: CallOutcome::Completed,
        });
        m.cycle_index = 1;
        assert_eq!(m.render(), "  cycle 0: alfa land() -> completed\n");
        m.clear();
        assert!(m.is_empty());
    }
}
