use std::path::PathBuf;
use std::sync::Arc;

use tacos::harness::fixtures::demo_script;
use tacos::llm::{RemoteBackend, RemoteConfig, Script, ScriptedBackend, SharedBackend};
use tacos::supervisor::DEFAULT_CYCLE_PERIOD;
use tacos::{AblationMode, PipelineConfig, UavId, WorldState};

/// Where a session's model answers come from.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    /// Built-in scripted demo: "Alfa, take off", the benchmark tasks and a
    /// refusal for anything else.
    Demo,
    Script(Script),
    Remote(RemoteConfig),
}

impl BackendChoice {
    pub fn build(&self, world: &WorldState, ids: &[UavId]) -> Result<SharedBackend, String> {
        let scripted = |s: Script| ScriptedBackend::new(s).map(|b| Arc::new(b) as SharedBackend).map_err(|e| e.to_string());
        match self {
            BackendChoice::Demo => scripted(demo_script(world, ids)),
            BackendChoice::Script(s) => scripted(s.clone()),
            BackendChoice::Remote(cfg) => Ok(Arc::new(RemoteBackend::new(cfg.clone()))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub world: Arc<WorldState>,
    /// Shown to clients; usually the scenario file name.
    pub scenario: String,
    pub backend: BackendChoice,
    pub mode: AblationMode,
    pub swarm_size: usize,
    pub seed: u64,
    pub cycle_period: f64,
    /// Wall seconds per simulated second; 0 runs unpaced.
    pub time_scale: f64,
    pub model_id: Option<String>,
    /// Session transcripts are written here as `<session>.jsonl`.
    pub transcript_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(world: WorldState, backend: BackendChoice) -> Self {
        let scenario = if world.name.is_empty() { "custom".into() } else { world.name.clone() };
        Self {
            world: Arc::new(world),
            scenario,
            backend,
            mode: AblationMode::Full,
            swarm_size: 4,
            seed: 0,
            cycle_period: DEFAULT_CYCLE_PERIOD,
            time_scale: 1.0,
            model_id: None,
            transcript_dir: None,
        }
    }

    pub fn pipeline_config(&self, mode: AblationMode) -> PipelineConfig {
        let mut cfg = PipelineConfig::with_mode(mode);
        cfg.supervision.cycle_period = self.cycle_period;
        if let Some(m) = &self.model_id {
            cfg.coordinator.model_id = m.clone();
            cfg.supervisor.model_id = m.clone();
        }
        cfg
    }
}
