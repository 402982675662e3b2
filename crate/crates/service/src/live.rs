use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tacos::planner::all_goals_reached;
use tacos::simulator::DispatchOutcome;
use tacos::{ActionCall, SimHandle, Simulator, SwarmState, WorldState};
use tokio::sync::watch;

/// Ticks between telemetry publications (0.2 s of simulated time at dt = 0.1).
const PUBLISH_EVERY: u64 = 2;

/// Simulator wrapper for interactive sessions: publishes snapshots while it
/// runs, paces simulated time against the wall clock and honours
/// cancellation between ticks.
pub struct LiveSim {
    sim: Simulator,
    telemetry: watch::Sender<Arc<SwarmState>>,
    cancel: Arc<AtomicBool>,
    /// Wall seconds per simulated second; 0 runs as fast as possible.
    time_scale: f64,
}

impl LiveSim {
    pub fn new(sim: Simulator, telemetry: watch::Sender<Arc<SwarmState>>, cancel: Arc<AtomicBool>, time_scale: f64) -> Self {
        let live = Self { sim, telemetry, cancel, time_scale: time_scale.max(0.0) };
        live.publish();
        live
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    fn publish(&self) {
        self.telemetry.send_replace(Arc::new(self.sim.swarm().clone()));
    }
}

impl SimHandle for LiveSim {
    fn snapshot(&self) -> SwarmState {
        self.sim.swarm().clone()
    }

    fn world(&self) -> Arc<WorldState> {
        self.sim.world().clone()
    }

    fn dispatch(&mut self, call: &ActionCall) -> DispatchOutcome {
        let outcome = self.sim.dispatch(call);
        self.publish();
        outcome
    }

    fn run_for(&mut self, period: f64, wake_when_idle: bool) -> SwarmState {
        let dt = self.sim.config().dt;
        let ticks = (period / dt).round().max(0.0) as u64;
        let start = Instant::now();
        for i in 0..ticks {
            if self.cancel.load(Ordering::SeqCst) || (wake_when_idle && all_goals_reached(self.sim.swarm())) {
                break;
            }
            self.sim.step();
            if (i + 1) % PUBLISH_EVERY == 0 {
                self.publish();
            }
            if self.time_scale > 0.0 {
                let due = start + Duration::from_secs_f64((i + 1) as f64 * dt * self.time_scale);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
            }
        }
        self.publish();
        self.sim.swarm().clone()
    }

    fn interrupted(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}
