//! Benchmark harness: seeded batches of trials per (task, ablation mode,
//! swarm size), aggregated into success rate and L.

pub mod fixtures;
pub mod fuzz;
mod report;
pub mod tasks;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{plot_csv, report_text};
pub use tasks::{TaskId, TaskSpec};

use crate::coordinator::TaskPlan;
use crate::llm::{LlmBackend, RecordingBackend, Script, ScriptedBackend, SharedBackend, Transcript};
use crate::par::{map_indexed, Execution};
use crate::pipeline::{AblationMode, Pipeline, PipelineConfig};
use crate::simulator::{hex_digest, SimConfig, Simulator, Trace};
use crate::supervisor::ExecutionReport;
use crate::swarm::{UavId, CALLSIGNS};
use crate::world::{Vec3, WorldState};

pub const SWARM_SIZES: [usize; 3] = [4, 8, 12];
pub const SPAWN_COLUMNS: usize = 4;
pub const SPAWN_JITTER: f64 = 1.0;
/// Cycle period used for benchmark runs; cycles still end early once the
/// swarm is idle.
pub const HARNESS_CYCLE_PERIOD: f64 = 30.0;

pub fn callsigns(n: usize) -> Vec<UavId> {
    assert!(n <= CALLSIGNS.len(), "at most {} UAVs", CALLSIGNS.len());
    CALLSIGNS[..n].iter().map(|c| UavId::new(c)).collect()
}

/// Nominal grid (4 columns, spacing from the scenario) with uniform ±1 m
/// horizontal jitter drawn from `(seed, run)`.
pub fn spawn_positions(world: &WorldState, n: usize, seed: u64, run: u64) -> Vec<(UavId, Vec3)> {
    let area = world.spawn.unwrap_or(crate::world::SpawnArea { center: Vec3::new(0.0, 0.0, 0.0), spacing: 5.0 });
    let rows = n.div_ceil(SPAWN_COLUMNS);
    let cols = n.min(SPAWN_COLUMNS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ run.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    callsigns(n)
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let (col, row) = ((i % SPAWN_COLUMNS) as f64, (i / SPAWN_COLUMNS) as f64);
            let x = area.center.x + (col - (cols as f64 - 1.0) / 2.0) * area.spacing;
            let y = area.center.y + (row - (rows as f64 - 1.0) / 2.0) * area.spacing;
            let jx = rng.random_range(-SPAWN_JITTER..=SPAWN_JITTER);
            let jy = rng.random_range(-SPAWN_JITTER..=SPAWN_JITTER);
            (id, Vec3::new(x + jx, y + jy, area.center.z))
        })
        .collect()
}

/// Where trial backends come from.
#[derive(Clone)]
pub enum BackendSource {
    /// Built-in scripted fixture for the task, mode and size.
    Fixture,
    /// A fixed script, fresh use counters per trial.
    Script(Script),
    /// A shared live backend (non-deterministic).
    Live(SharedBackend),
}

impl BackendSource {
    fn backend(&self, task: &TaskSpec, mode: AblationMode, world: &WorldState, ids: &[UavId]) -> Result<SharedBackend, String> {
        match self {
            BackendSource::Fixture => ScriptedBackend::new(fixtures::task_script(task, mode, world, ids))
                .map(|b| Arc::new(b) as SharedBackend)
                .map_err(|e| e.to_string()),
            BackendSource::Script(s) => {
                ScriptedBackend::new(s.clone()).map(|b| Arc::new(b) as SharedBackend).map_err(|e| e.to_string())
            }
            BackendSource::Live(b) => Ok(b.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub run: u64,
    pub success: bool,
    pub cycles_used: usize,
    pub failure: Option<String>,
    pub sim_time: f64,
    pub trace_digest: String,
}

/// Everything one trial produced, for inspection and replay.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub record: TrialRecord,
    pub trace: Trace,
    pub transcript: Transcript,
    pub plan: Option<TaskPlan>,
    pub report: Option<ExecutionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub task: TaskSpec,
    pub mode: AblationMode,
    pub swarm_size: usize,
    pub seed: u64,
}

fn fail(run: u64, trace: Trace, transcript: Transcript, why: String) -> TrialArtifacts {
    let digest = trace_digest(&trace);
    TrialArtifacts {
        record: TrialRecord {
            run,
            success: false,
            cycles_used: 0,
            failure: Some(why),
            sim_time: trace.ticks.last().map_or(0.0, |t| t.time),
            trace_digest: digest,
        },
        trace,
        transcript,
        plan: None,
        report: None,
    }
}

fn trace_digest(trace: &Trace) -> String {
    trace.digest()
}

/// One seeded run: optional warmup, the task instruction, predicate check.
pub fn run_trial(cfg: &TrialConfig, world: &Arc<WorldState>, run: u64, source: &BackendSource) -> TrialArtifacts {
    let spawns = spawn_positions(world, cfg.swarm_size, cfg.seed, run);
    let ids: Vec<UavId> = spawns.iter().map(|(id, _)| id.clone()).collect();
    let mut sim_cfg = SimConfig::new(spawns);
    sim_cfg.seed = cfg.seed;
    let mut sim = match Simulator::new(world.clone(), sim_cfg) {
        Ok(s) => s,
        Err(e) => return fail(run, Trace::default(), Transcript::default(), format!("simulator: {e}")),
    };
    let inner = match source.backend(&cfg.task, cfg.mode, world, &ids) {
        Ok(b) => b,
        Err(e) => return fail(run, sim.into_trace(), Transcript::default(), format!("backend: {e}")),
    };
    let recorder = Arc::new(RecordingBackend::new(inner));
    let mut pcfg = PipelineConfig::with_mode(cfg.mode);
    pcfg.supervision.cycle_period = HARNESS_CYCLE_PERIOD;
    let mut pipeline = Pipeline::new(recorder.clone() as Arc<dyn LlmBackend>, world, pcfg);

    if let Some(warmup) = cfg.task.warmup() {
        match pipeline.handle_instruction(warmup, &mut sim) {
            Ok((_, r)) if r.success => {}
            Ok((_, r)) => {
                let why = format!("warmup failed: {}", r.failure.unwrap_or_else(|| "unsuccessful".into()));
                return fail(run, sim.into_trace(), recorder.transcript(), why);
            }
            Err(e) => return fail(run, sim.into_trace(), recorder.transcript(), format!("warmup: {e}")),
        }
    }
    let from = sim.trace().ticks.len() - 1;
    let (plan, report) = match pipeline.handle_instruction(&cfg.task.instruction, &mut sim) {
        Ok(r) => r,
        Err(e) => return fail(run, sim.into_trace(), recorder.transcript(), format!("coordinator: {e}")),
    };
    let trace = sim.into_trace();
    let predicate = cfg.task.predicate(&trace, world, from);
    let in_budget = report.end_time - report.start_time <= cfg.task.time_budget;
    let failure = if !report.success {
        report.failure.clone().or(Some("execution unsuccessful".into()))
    } else if !in_budget {
        Some("time budget exceeded".into())
    } else if !predicate {
        Some("success predicate not met".into())
    } else {
        None
    };
    TrialArtifacts {
        record: TrialRecord {
            run,
            success: failure.is_none(),
            cycles_used: report.cycles_used,
            failure,
            sim_time: trace.ticks.last().map_or(0.0, |t| t.time),
            trace_digest: trace_digest(&trace),
        },
        trace,
        transcript: recorder.transcript(),
        plan: Some(plan),
        report: Some(report),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub task: TaskId,
    pub mode: AblationMode,
    pub swarm_size: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub success_rate: f64,
    /// Mean cycles over successful trials; absent without any success.
    pub avg_steps_l: Option<f64>,
    pub trials: Vec<TrialRecord>,
}

impl BatchResult {
    pub fn from_trials(cfg: &TrialConfig, trials: Vec<TrialRecord>) -> Self {
        let (success_rate, avg_steps_l) = aggregate(&trials);
        Self {
            task: cfg.task.id,
            mode: cfg.mode,
            swarm_size: cfg.swarm_size,
            n_runs: trials.len(),
            seed: cfg.seed,
            success_rate,
            avg_steps_l,
            trials,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("batch result serializes")
    }

    /// SHA-256 over the JSON form.
    pub fn digest(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }
}

/// `(success_rate, L)` where L averages cycles over successful trials only.
pub fn aggregate(trials: &[TrialRecord]) -> (f64, Option<f64>) {
    if trials.is_empty() {
        return (0.0, None);
    }
    let ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.success).collect();
    let rate = ok.len() as f64 / trials.len() as f64;
    let l = (!ok.is_empty()).then(|| ok.iter().map(|t| t.cycles_used as f64).sum::<f64>() / ok.len() as f64);
    (rate, l)
}

pub fn run_batch(cfg: &TrialConfig, n_runs: usize, source: &BackendSource, exec: Execution) -> BatchResult {
    let world = Arc::new(WorldState::urban());
    run_batch_in(cfg, &world, n_runs, source, exec)
}

pub fn run_batch_in(
    cfg: &TrialConfig,
    world: &Arc<WorldState>,
    n_runs: usize,
    source: &BackendSource,
    exec: Execution,
) -> BatchResult {
    let trials = map_indexed(n_runs, exec, |i| run_trial(cfg, world, i as u64, source).record);
    BatchResult::from_trials(cfg, trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(success: bool, cycles: usize) -> TrialRecord {
        TrialRecord { run: 0, success, cycles_used: cycles, failure: None, sim_time: 0.0, trace_digest: String::new() }
    }

    #[test]
    fn l_counts_successes_only() {
        let (rate, l) = aggregate(&[rec(true, 1), rec(false, 12), rec(true, 3), rec(false, 7)]);
        assert_eq!(rate, 0.5);
        assert_eq!(l, Some(2.0));
        assert_eq!(aggregate(&[rec(false, 4)]), (0.0, None));
        assert_eq!(aggregate(&[]), (0.0, None));
    }

    #[test]
    fn spawn_grid_is_jittered_and_separated() {
        let world = WorldState::urban();
        let a = spawn_positions(&world, 12, 7, 0);
        let b = spawn_positions(&world, 12, 7, 1);
        assert_ne!(a, b);
        assert_eq!(a, spawn_positions(&world, 12, 7, 0));
        for (i, (_, p)) in a.iter().enumerate() {
            assert!(crate::world::point_is_free(*p, &world));
            for (_, q) in &a[..i] {
                assert!(p.distance(*q) >= 2.0);
            }
        }
    }
}
