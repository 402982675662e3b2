//! Instruction → plan → execution → history, wired for each ablation mode.
//!
//! | mode          | agents                           | Coordinator history        | reasoning to Supervisor |
//! |---------------|----------------------------------|----------------------------|-------------------------|
//! | Full          | two stateless agents             | `CoordinatorHistory`       | yes                     |
//! | NoCoordinator | one conversational merged agent  | the agent's own dialogue   | yes (it wrote it)       |
//! | NoReasoning   | two stateless agents             | `CoordinatorHistory`       | withheld                |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actions::{render_api_doc, ActionRegistry};
use crate::coordinator::{
    build_config_prompt, shipped_examples, Coordinator, CoordinatorError, FewShotExample, Instruction, TaskPlan,
    COORDINATOR_FORMAT,
};
use crate::history::{CoordinatorHistory, HistoryEntry, DEFAULT_HISTORY_BUDGET};
use crate::llm::{Agent, AgentHandle, AgentParams, SharedBackend};
use crate::simulator::SimHandle;
use crate::supervisor::{build_supervisor_prompt, ExecutionReport, Supervisor, SupervisorConfig, SUPERVISOR_FORMAT};
use crate::swarm::SwarmState;
use crate::world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    Full,
    #[serde(rename = "woc")]
    NoCoordinator,
    #[serde(rename = "wor")]
    NoReasoning,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Full, AblationMode::NoCoordinator, AblationMode::NoReasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoCoordinator => "woc",
            AblationMode::NoReasoning => "wor",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(AblationMode::Full),
            "woc" | "w/oc" | "no-coordinator" => Ok(AblationMode::NoCoordinator),
            "wor" | "w/or" | "no-reasoning" => Ok(AblationMode::NoReasoning),
            other => Err(format!("unknown mode {other:?} (expected full, woc or wor)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: AblationMode,
    pub coordinator: AgentParams,
    pub supervisor: AgentParams,
    pub supervision: SupervisorConfig,
    pub history_budget: usize,
    /// `None` uses the shipped examples.
    pub examples: Option<Vec<FewShotExample>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: AblationMode::Full,
            coordinator: AgentParams::default(),
            supervisor: AgentParams::default(),
            supervision: SupervisorConfig::default(),
            history_budget: DEFAULT_HISTORY_BUDGET,
            examples: None,
        }
    }
}

impl PipelineConfig {
    pub fn with_mode(mode: AblationMode) -> Self {
        Self { mode, ..Self::default() }
    }
}

/// Union prompt for the merged single-agent ablation.
pub fn build_merged_prompt(coordinator_prompt: &str, supervisor_prompt: &str) -> String {
    format!(
        "You play two roles for a UAV swarm and keep the whole conversation as your memory.\n\
         When the last message ends with an INSTRUCTION line, you are planning: answer in the planning format.\n\
         When it ends with a CYCLE line, you are executing your own plan: answer in the execution format.\n\n\
         === PLANNING ROLE ===\n{coordinator_prompt}\n=== EXECUTION ROLE ===\n{supervisor_prompt}"
    )
}

pub struct Pipeline {
    mode: AblationMode,
    coordinator: Coordinator,
    supervisor: Supervisor,
    history: Option<CoordinatorHistory>,
}

impl Pipeline {
    pub fn new(backend: SharedBackend, world: &WorldState, cfg: PipelineConfig) -> Self {
        let registry = ActionRegistry::default();
        Self::with_registry(backend, world, registry, cfg)
    }

    pub fn with_registry(backend: SharedBackend, world: &WorldState, registry: ActionRegistry, cfg: PipelineConfig) -> Self {
        let api_doc = render_api_doc(&registry);
        let examples = cfg.examples.clone().unwrap_or_else(|| shipped_examples(world));
        let coord_prompt = build_config_prompt(&api_doc, &examples, world);
        let sup_prompt = build_supervisor_prompt(&api_doc);
        let mut supervision = cfg.supervision;
        supervision.include_reasoning = cfg.mode != AblationMode::NoReasoning;
        let (coord_agent, sup_agent, history): (AgentHandle, AgentHandle, _) = match cfg.mode {
            AblationMode::NoCoordinator => {
                let merged = Agent::conversational("merged", build_merged_prompt(&coord_prompt, &sup_prompt), backend, cfg.coordinator)
                    .into_handle();
                (merged.clone(), merged, None)
            }
            AblationMode::Full | AblationMode::NoReasoning => (
                Agent::stateless("coordinator", coord_prompt, backend.clone(), cfg.coordinator).into_handle(),
                Agent::stateless("supervisor", sup_prompt, backend, cfg.supervisor).into_handle(),
                Some(CoordinatorHistory::new()),
            ),
        };
        Self {
            mode: cfg.mode,
            coordinator: Coordinator::new(coord_agent, registry.clone()).with_history_budget(cfg.history_budget),
            supervisor: Supervisor::new(sup_agent, registry, supervision),
            history,
        }
    }

    pub fn mode(&self) -> AblationMode {
        self.mode
    }

    pub fn history(&self) -> Option<&CoordinatorHistory> {
        self.history.as_ref()
    }

    /// Replaces the Coordinator history, e.g. when resuming a session.
    pub fn restore_history(&mut self, h: CoordinatorHistory) {
        if self.history.is_some() {
            self.history = Some(h);
        }
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn supervisor(&self) -> &Supervisor {
        &self.supervisor
    }

    pub fn supervisor_mut(&mut self) -> &mut Supervisor {
        &mut self.supervisor
    }

    /// Number of distinct agents behind the two roles.
    pub fn agent_count(&self) -> usize {
        if std::sync::Arc::ptr_eq(self.coordinator.agent(), self.supervisor.agent()) {
            1
        } else {
            2
        }
    }

    pub fn plan(&mut self, text: &str, swarm: &SwarmState, world: &WorldState) -> Result<TaskPlan, CoordinatorError> {
        let instr = Instruction::new(text, swarm.sim_time)?;
        self.coordinator.plan(&instr, swarm, world, self.history.as_mut())
    }

    /// Executes `plan` and records its outcome in the Coordinator history.
    pub fn execute(&mut self, plan: &TaskPlan, sim: &mut dyn SimHandle) -> ExecutionReport {
        self.execute_observed(plan, sim, &mut |_| {})
    }

    pub fn execute_observed(
        &mut self,
        plan: &TaskPlan,
        sim: &mut dyn SimHandle,
        observe: &mut dyn FnMut(&crate::supervisor::CycleRecord),
    ) -> ExecutionReport {
        let report = self.supervisor.execute_plan_observed(plan, sim, observe);
        self.record_outcome(&report, &sim.snapshot());
        report
    }

    pub fn record_outcome(&mut self, report: &ExecutionReport, swarm: &SwarmState) {
        let Some(h) = self.history.as_mut() else { return };
        let outcome = match (&report.failure, report.success) {
            (_, true) => format!("succeeded after {} cycles", report.cycles_used),
            (Some(f), false) => format!("failed after {} cycles: {f}", report.cycles_used),
            (None, false) => format!("failed after {} cycles", report.cycles_used),
        };
        let digest = swarm.uavs.iter().map(|u| format!("{} {}", u.id, u.phase)).collect::<Vec<_>>().join(", ");
        let entry = HistoryEntry::Update { issued_at: swarm.sim_time, plan_id: report.plan_id.clone(), outcome, digest };
        if let Err(e) = h.push(entry) {
            tracing::warn!("history update dropped: {e}");
        }
    }

    /// Plan then execute one instruction against `sim`.
    pub fn handle_instruction(
        &mut self,
        text: &str,
        sim: &mut dyn SimHandle,
    ) -> Result<(TaskPlan, ExecutionReport), CoordinatorError> {
        let swarm = sim.snapshot();
        let world = sim.world();
        let plan = self.plan(text, &swarm, &world)?;
        let report = self.execute(&plan, sim);
        Ok((plan, report))
    }
}

/// Format contracts, for documentation and prompt tests.
pub fn format_contracts() -> (&'static str, &'static str) {
    (COORDINATOR_FORMAT, SUPERVISOR_FORMAT)
}
