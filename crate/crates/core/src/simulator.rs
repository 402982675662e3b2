//! Deterministic fixed-step world: owns the swarm, applies dispatched
//! actions, advances kinematics through the planner and records a trace.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actions::ActionCall;
use crate::planner::{plan_velocities, all_goals_reached, PlannerConfig, PlannerError, StallClock};
use crate::swarm::{apply_action, phase_tick, Limits, Phase, SwarmState, UavId, UavState};
use crate::world::{point_is_free, Vec3, WorldState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step must be positive")]
    BadTimeStep,
    #[error("duplicate UAV id {0}")]
    DuplicateUav(UavId),
    #[error("spawn of {0} is not in free space")]
    SpawnNotFree(UavId),
    #[error("spawns of {0} and {1} are closer than 2·d_min")]
    SpawnTooClose(UavId, UavId),
    #[error("duration {0} is not a positive multiple of dt")]
    BadDuration(f64),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub seed: u64,
    pub planner: PlannerConfig,
    pub limits: Limits,
    pub spawns: Vec<(UavId, Vec3)>,
}

impl SimConfig {
    pub fn new(spawns: Vec<(UavId, Vec3)>) -> Self {
        Self { dt: 0.1, seed: 0, planner: PlannerConfig::default(), limits: Limits::default(), spawns }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispatchOutcome {
    Accepted,
    Rejected(String),
}

impl DispatchOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, DispatchOutcome::Accepted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavSample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub states: Vec<UavSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Dispatch { call: ActionCall, outcome: DispatchOutcome },
    Infeasible { uav: UavId },
    GoalDropped { uav: UavId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Last tick recorded before the event happened.
    pub tick: u64,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub dt: f64,
    pub ids: Vec<UavId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TraceLine {
    Header { header: TraceHeader },
    Tick(TickRecord),
    Event(TraceEvent),
}

/// Per-tick swarm samples plus the dispatch/planner event log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub dt: f64,
    pub ids: Vec<UavId>,
    pub ticks: Vec<TickRecord>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|u| u.as_str() == id)
    }

    /// One JSON record per line: header, then ticks with their events.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = TraceLine::Header { header: TraceHeader { dt: self.dt, ids: self.ids.clone() } };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        let mut events = self.events.iter().peekable();
        for t in &self.ticks {
            while let Some(e) = events.next_if(|e| e.tick < t.tick) {
                writeln!(w, "{}", serde_json::to_string(e)?)?;
            }
            writeln!(w, "{}", serde_json::to_string(t)?)?;
        }
        for e in events {
            writeln!(w, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, SimError> {
        let mut trace = Trace::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TraceLine>(&line)? {
                TraceLine::Header { header } => {
                    trace.dt = header.dt;
                    trace.ids = header.ids;
                }
                TraceLine::Tick(t) => trace.ticks.push(t),
                TraceLine::Event(e) => trace.events.push(e),
            }
        }
        Ok(trace)
    }

    /// SHA-256 of the JSONL rendering, hex encoded.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        hex_digest(&buf)
    }

    /// Per-UAV trajectory polylines with speed, for plotting:
    /// `uav,time,x,y,z,speed`.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("uav,time,x,y,z,speed\n");
        for (i, id) in self.ids.iter().enumerate() {
            for t in &self.ticks {
                let s = &t.states[i];
                out.push_str(&format!(
                    "{},{:.3},{:.4},{:.4},{:.4},{:.4}\n",
                    id,
                    t.time,
                    s.position.x,
                    s.position.y,
                    s.position.z,
                    s.velocity.norm()
                ));
            }
        }
        out
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What the supervisor loop needs from a running simulation.
pub trait SimHandle {
    fn snapshot(&self) -> SwarmState;
    fn world(&self) -> Arc<WorldState>;
    fn dispatch(&mut self, call: &ActionCall) -> DispatchOutcome;
    /// Advances up to `period` seconds; with `wake_when_idle` it returns as
    /// soon as every goal is reached.
    fn run_for(&mut self, period: f64, wake_when_idle: bool) -> SwarmState;
    /// Set when an external party cancelled the current plan.
    fn interrupted(&self) -> bool {
        false
    }
}

pub struct Simulator {
    cfg: SimConfig,
    world: Arc<WorldState>,
    swarm: SwarmState,
    tick: u64,
    stall: StallClock,
    trace: Trace,
    stream: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator").field("tick", &self.tick).field("swarm", &self.swarm).finish()
    }
}

impl Simulator {
    pub fn new(world: impl Into<Arc<WorldState>>, mut cfg: SimConfig) -> Result<Self, SimError> {
        let world = world.into();
        if !(cfg.dt > 0.0) {
            return Err(SimError::BadTimeStep);
        }
        cfg.planner.v_max = cfg.limits.v_max;
        cfg.planner.arrival_tolerance = cfg.limits.arrival_tolerance;
        cfg.planner.validate()?;
        for (i, (id, p)) in cfg.spawns.iter().enumerate() {
            if !point_is_free(*p, &world) {
                return Err(SimError::SpawnNotFree(id.clone()));
            }
            for (other, q) in &cfg.spawns[..i] {
                if other == id {
                    return Err(SimError::DuplicateUav(id.clone()));
                }
                if p.distance(*q) < 2.0 * cfg.planner.d_min {
                    return Err(SimError::SpawnTooClose(other.clone(), id.clone()));
                }
            }
        }
        let swarm = SwarmState {
            sim_time: 0.0,
            uavs: cfg.spawns.iter().map(|(id, p)| UavState::grounded(id.clone(), *p)).collect(),
        };
        let trace = Trace { dt: cfg.dt, ids: swarm.uavs.iter().map(|u| u.id.clone()).collect(), ..Default::default() };
        let mut sim = Self { cfg, world, swarm, tick: 0, stall: StallClock::new(), trace, stream: None };
        sim.record_tick();
        Ok(sim)
    }

    /// Also write every trace record to `sink` as it is produced.
    pub fn stream_to(&mut self, mut sink: Box<dyn Write + Send>) -> Result<(), SimError> {
        self.trace.write_jsonl(&mut sink)?;
        self.stream = Some(sink);
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn world(&self) -> &Arc<WorldState> {
        &self.world
    }

    pub fn swarm(&self) -> &SwarmState {
        &self.swarm
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn sim_time(&self) -> f64 {
        self.swarm.sim_time
    }

    pub fn dispatch(&mut self, call: &ActionCall) -> DispatchOutcome {
        let outcome = self.try_dispatch(call);
        self.push_event(EventKind::Dispatch { call: call.clone(), outcome: outcome.clone() });
        outcome
    }

    fn try_dispatch(&mut self, call: &ActionCall) -> DispatchOutcome {
        let Some(idx) = self.swarm.uavs.iter().position(|u| u.id == call.target_uav) else {
            return DispatchOutcome::Rejected(format!("UnknownUav: {}", call.target_uav));
        };
        match apply_action(&self.swarm.uavs[idx], call, &self.cfg.limits) {
            Ok(next) => {
                if let Some(goal) = next.goal {
                    if !point_is_free(goal, &self.world) {
                        return DispatchOutcome::Rejected(format!("GoalInObstacle: {goal}"));
                    }
                }
                self.swarm.uavs[idx] = next;
                self.stall.remove(&call.target_uav);
                DispatchOutcome::Accepted
            }
            Err(e) => DispatchOutcome::Rejected(format!("InvalidPhaseTransition: {e}")),
        }
    }

    /// Runs `duration / dt` ticks. `duration` must be a multiple of `dt`
    /// within 1e-9.
    pub fn advance(&mut self, duration: f64) -> Result<SwarmState, SimError> {
        let ticks = self.ticks_for(duration)?;
        for _ in 0..ticks {
            self.step();
        }
        Ok(self.swarm.clone())
    }

    /// Like [`advance`](Self::advance) but stops early once every goal is
    /// reached. Returns the number of ticks run.
    pub fn advance_until_idle(&mut self, max_duration: f64) -> Result<u64, SimError> {
        let ticks = self.ticks_for(max_duration)?;
        let mut ran = 0;
        while ran < ticks && !all_goals_reached(&self.swarm) {
            self.step();
            ran += 1;
        }
        Ok(ran)
    }

    fn ticks_for(&self, duration: f64) -> Result<u64, SimError> {
        let n = duration / self.cfg.dt;
        let rounded = n.round();
        if !(duration > 0.0) || (n - rounded).abs() > 1e-9 * n.max(1.0) {
            return Err(SimError::BadDuration(duration));
        }
        Ok(rounded as u64)
    }

    /// One fixed step: plan, integrate, record.
    pub fn step(&mut self) {
        let plan = loop {
            match plan_velocities(&self.swarm, &self.world, &self.cfg.planner, self.cfg.dt, &self.stall) {
                Ok(plan) => break plan,
                Err(PlannerError::GoalInObstacle(id)) => {
                    // cannot happen for dispatched goals; drop it rather than abort
                    if let Some(u) = self.swarm.uavs.iter_mut().find(|u| u.id == id) {
                        u.goal = None;
                        u.phase = Phase::Hovering;
                    }
                    self.push_event(EventKind::GoalDropped { uav: id, reason: "GoalInObstacle".into() });
                }
                Err(e) => unreachable!("planner config validated at construction: {e}"),
            }
        };
        for id in &plan.infeasible {
            self.push_event(EventKind::Infeasible { uav: id.clone() });
        }
        let dt = self.cfg.dt;
        for (u, (_, v)) in self.swarm.uavs.iter_mut().zip(&plan.velocities) {
            let next = phase_tick(u, *v, dt, &self.cfg.limits);
            if next.goal.is_some() && *v == Vec3::ZERO {
                *self.stall.entry(u.id.clone()).or_insert(0.0) += dt;
            } else {
                self.stall.remove(&u.id);
            }
            *u = next;
        }
        self.tick += 1;
        self.swarm.sim_time = self.tick as f64 * dt;
        self.record_tick();
    }

    fn record_tick(&mut self) {
        let rec = TickRecord {
            tick: self.tick,
            time: self.swarm.sim_time,
            states: self
                .swarm
                .uavs
                .iter()
                .map(|u| UavSample { position: u.position, velocity: u.velocity, phase: u.phase })
                .collect(),
        };
        if let Some(s) = self.stream.as_mut() {
            if let Ok(line) = serde_json::to_string(&rec) {
                let _ = writeln!(s, "{line}");
            }
        }
        self.trace.ticks.push(rec);
    }

    fn push_event(&mut self, kind: EventKind) {
        let e = TraceEvent { tick: self.tick, time: self.swarm.sim_time, kind };
        if let Some(s) = self.stream.as_mut() {
            if let Ok(line) = serde_json::to_string(&e) {
                let _ = writeln!(s, "{line}");
            }
        }
        self.trace.events.push(e);
    }
}

impl SimHandle for Simulator {
    fn snapshot(&self) -> SwarmState {
        self.swarm.clone()
    }

    fn world(&self) -> Arc<WorldState> {
        self.world.clone()
    }

    fn dispatch(&mut self, call: &ActionCall) -> DispatchOutcome {
        Simulator::dispatch(self, call)
    }

    fn run_for(&mut self, period: f64, wake_when_idle: bool) -> SwarmState {
        let result = if wake_when_idle { self.advance_until_idle(period).map(|_| ()) } else { self.advance(period).map(|_| ()) };
        if let Err(e) = result {
            tracing::warn!("cycle advance rejected: {e}");
        }
        self.swarm.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::CallOrigin;
    use crate::world::Bounds;

    fn open_world() -> WorldState {
        WorldState::empty(Bounds::new(Vec3::new(-50.0, -50.0, 0.0), Vec3::new(50.0, 50.0, 30.0)).unwrap())
    }

    fn call(uav: &str, action: &str, args: &[f64]) -> ActionCall {
        ActionCall { target_uav: uav.into(), action: action.into(), args: args.to_vec(), origin: CallOrigin::SupervisorIssued }
    }

    fn three() -> Simulator {
        let spawns = vec![
            ("alfa".into(), Vec3::new(0.0, 0.0, 0.0)),
            ("bravo".into(), Vec3::new(5.0, 0.0, 0.0)),
            ("charlie".into(), Vec3::new(10.0, 0.0, 0.0)),
        ];
        Simulator::new(open_world(), SimConfig::new(spawns)).unwrap()
    }

    #[test]
    fn dispatch_outcomes() {
        let mut sim = three();
        assert_eq!(sim.dispatch(&call("alfa", "arm_takeoff", &[])), DispatchOutcome::Accepted);
        assert!(matches!(sim.dispatch(&call("bravo", "goto", &[1.0, 1.0, 1.0])), DispatchOutcome::Rejected(r) if r.starts_with("InvalidPhaseTransition")));
        sim.dispatch(&call("charlie", "arm_takeoff", &[]));
        sim.advance(2.0).unwrap();
        assert_eq!(sim.swarm().get("charlie").unwrap().phase, Phase::Hovering);
        assert_eq!(sim.dispatch(&call("charlie", "land", &[])), DispatchOutcome::Accepted);
        assert_eq!(sim.trace().events.len(), 4);
    }

    #[test]
    fn idle_swarm_does_not_move() {
        let mut sim = three();
        let before = sim.swarm().clone();
        let after = sim.advance(10.0).unwrap();
        assert_eq!(after.sim_time, 10.0);
        for (a, b) in before.uavs.iter().zip(&after.uavs) {
            assert_eq!(a.position, b.position);
        }
        assert_eq!(sim.trace().ticks.len(), 101);
    }

    #[test]
    fn short_goto_arrives_on_schedule() {
        let mut sim = three();
        sim.dispatch(&call("alfa", "arm_takeoff", &[]));
        sim.advance_until_idle(5.0).unwrap();
        sim.dispatch(&call("alfa", "goto", &[0.0, -2.0, 2.0]));
        let t0 = sim.sim_time();
        sim.advance_until_idle(5.0).unwrap();
        // 2 m at 2 m/s: 1 s, plus at most one tick to settle
        assert!(sim.sim_time() - t0 <= 1.0 + 0.1 + 1e-9, "{}", sim.sim_time() - t0);
        assert_eq!(sim.swarm().get("alfa").unwrap().phase, Phase::Hovering);
    }

    #[test]
    fn rejects_bad_durations_and_spawns() {
        let mut sim = three();
        assert!(matches!(sim.advance(0.05), Err(SimError::BadDuration(_))));
        assert!(matches!(sim.advance(-1.0), Err(SimError::BadDuration(_))));
        let close = vec![("a".into(), Vec3::ZERO), ("b".into(), Vec3::new(1.5, 0.0, 0.0))];
        assert!(matches!(Simulator::new(open_world(), SimConfig::new(close)), Err(SimError::SpawnTooClose(..))));
    }

    #[test]
    fn time_is_conserved() {
        let mut sim = three();
        for d in [0.1, 2.5, 10.0, 0.3] {
            sim.advance(d).unwrap();
        }
        assert!((sim.sim_time() - 12.9).abs() < 1e-9);
        let ts: Vec<f64> = sim.trace().ticks.iter().map(|t| t.time).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let mut sim = three();
        sim.dispatch(&call("alfa", "arm_takeoff", &[]));
        sim.advance(1.0).unwrap();
        let mut buf = Vec::new();
        sim.trace().write_jsonl(&mut buf).unwrap();
        let back = Trace::read_jsonl(&buf[..]).unwrap();
        assert_eq!(&back, sim.trace());
        assert_eq!(back.digest(), sim.trace().digest());
        assert!(sim.trace().plot_csv().lines().count() == 1 + 3 * 11);
    }
}
