//! The three benchmark tasks: instructions, geometry and success predicates.
//!
//! Task 1 layout (urban scenario): group A is the first half of the
//! callsigns and circles `park_north` at 8 m, each UAV visiting three points
//! 120° apart on a 10 m circle starting from its own phase angle. Group B
//! then moves to a 3×2 grid (5 m spacing, 6 m altitude) over `park_south`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coordinator::inspection_point;
use crate::simulator::{EventKind, Trace};
use crate::swarm::{Phase, UavId};
use crate::world::{EntityKind, Vec3, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Task0,
    Task1,
    Task2,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Task0, TaskId::Task1, TaskId::Task2];

    pub fn index(self) -> u8 {
        match self {
            TaskId::Task0 => 0,
            TaskId::Task1 => 1,
            TaskId::Task2 => 2,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task{}", self.index())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim_start_matches("task") {
            "0" => Ok(TaskId::Task0),
            "1" => Ok(TaskId::Task1),
            "2" => Ok(TaskId::Task2),
            _ => Err(format!("unknown task {s:?} (expected 0, 1 or 2)")),
        }
    }
}

pub const TASK0_INSTRUCTION: &str = "All drones, take off.";
pub const TASK1_INSTRUCTION: &str = "Split the swarm into two groups. The first group circles over the north park \
                                     at 8 meters, each drone visiting three waypoints. Once the maneuver is complete, \
                                     the second group moves to the south park at 6 meters.";
pub const TASK2_INSTRUCTION: &str = "Inspect all eight cars in the environment.";

pub const DEPARTURE_THRESHOLD: f64 = 1.0;
pub const WAYPOINT_RADIUS: f64 = 1.0;
pub const INSPECTION_RADIUS: f64 = 2.0;
const CIRCLE_RADIUS: f64 = 10.0;
const CIRCLE_ALTITUDE: f64 = 8.0;
const GRID_SPACING: f64 = 5.0;
const GRID_ALTITUDE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub instruction: String,
    /// Simulated seconds the measured instruction may take.
    pub time_budget: f64,
}

impl TaskSpec {
    pub fn new(id: TaskId) -> Self {
        let instruction = match id {
            TaskId::Task0 => TASK0_INSTRUCTION,
            TaskId::Task1 => TASK1_INSTRUCTION,
            TaskId::Task2 => TASK2_INSTRUCTION,
        };
        Self { id, instruction: instruction.into(), time_budget: 600.0 }
    }

    /// Tasks 1 and 2 assume an airborne swarm, so their runs start with the
    /// Task 0 instruction in the same session.
    pub fn warmup(&self) -> Option<&'static str> {
        (self.id != TaskId::Task0).then_some(TASK0_INSTRUCTION)
    }

    /// Evaluates the task over the trace from tick index `from` onwards.
    pub fn predicate(&self, trace: &Trace, world: &WorldState, from: usize) -> bool {
        match self.id {
            TaskId::Task0 => task0_success(trace, from),
            TaskId::Task1 => task1_success(trace, world, from),
            TaskId::Task2 => task2_success(trace, world, from),
        }
    }
}

pub fn task0_success(trace: &Trace, from: usize) -> bool {
    let Some(last) = trace.ticks.last() else { return false };
    let start_tick = trace.ticks.get(from).map_or(u64::MAX, |t| t.tick);
    let landed = trace.events.iter().any(|e| {
        e.tick >= start_tick
            && matches!(&e.kind, EventKind::Dispatch { call, outcome } if call.action == "land" && outcome.is_accepted())
    });
    !landed && !last.states.is_empty() && last.states.iter().all(|s| s.phase == Phase::Hovering)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task1Layout {
    pub group_a: Vec<(UavId, [Vec3; 3])>,
    pub group_b: Vec<(UavId, Vec3)>,
}

pub fn task1_layout(world: &WorldState, ids: &[UavId]) -> Task1Layout {
    let north = world.entity("park_north").map_or(Vec3::new(50.0, 80.0, 0.0), |e| e.position);
    let south = world.entity("park_south").map_or(Vec3::new(50.0, 20.0, 0.0), |e| e.position);
    let n_a = ids.len().div_ceil(2);
    let group_a = ids[..n_a]
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let phase = TAU * j as f64 / n_a as f64;
            let wp = |k: usize| {
                let a = phase + k as f64 * TAU / 3.0;
                Vec3::new(north.x + CIRCLE_RADIUS * a.cos(), north.y + CIRCLE_RADIUS * a.sin(), CIRCLE_ALTITUDE)
            };
            (id.clone(), [wp(0), wp(1), wp(2)])
        })
        .collect();
    let group_b = ids[n_a..]
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let (col, row) = ((j % 3) as f64, (j / 3) as f64);
            (id.clone(), Vec3::new(south.x + (col - 1.0) * GRID_SPACING, south.y + (row - 0.5) * GRID_SPACING, GRID_ALTITUDE))
        })
        .collect();
    Task1Layout { group_a, group_b }
}

/// Group A visits its waypoints in order before any group-B UAV moves more
/// than 1 m from where it stood when the task began; group B then arrives.
pub fn task1_success(trace: &Trace, world: &WorldState, from: usize) -> bool {
    if from >= trace.ticks.len() {
        return false;
    }
    let layout = task1_layout(world, &trace.ids);
    let ticks = &trace.ticks[from..];
    let pos = |k: usize, id: &UavId| trace.index_of(id.as_str()).map(|i| ticks[k].states[i].position);
    let mut a_done = 0usize;
    for (id, wps) in &layout.group_a {
        let mut next = 0;
        let mut finished_at = None;
        for k in 0..ticks.len() {
            let Some(p) = pos(k, id) else { return false };
            if p.distance(wps[next]) <= WAYPOINT_RADIUS {
                next += 1;
                if next == wps.len() {
                    finished_at = Some(k);
                    break;
                }
            }
        }
        match finished_at {
            Some(k) => a_done = a_done.max(k),
            None => return false,
        }
    }
    for (id, target) in &layout.group_b {
        let Some(start) = pos(0, id) else { return false };
        let departed = (0..ticks.len()).find(|&k| pos(k, id).is_some_and(|p| p.distance(start) > DEPARTURE_THRESHOLD));
        if departed.is_some_and(|k| k <= a_done) {
            return false;
        }
        let arrived = (0..ticks.len()).any(|k| pos(k, id).is_some_and(|p| p.distance(*target) <= WAYPOINT_RADIUS));
        if !arrived {
            return false;
        }
    }
    true
}

/// Inspection target for each car, in entity order.
pub fn task2_targets(world: &WorldState) -> Vec<Vec3> {
    world.entities_of(EntityKind::Car).map(|e| inspection_point(e.position)).collect()
}

/// Car indices assigned to each UAV: one car each when there are enough
/// UAVs, otherwise cars `2k` and `2k+1` for UAV `k` (and so on).
pub fn task2_assignment(n_uavs: usize, n_cars: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_uavs];
    if n_uavs == 0 {
        return out;
    }
    let per = n_cars.div_ceil(n_uavs);
    for c in 0..n_cars {
        out[c / per].push(c);
    }
    out
}

pub fn task2_success(trace: &Trace, world: &WorldState, from: usize) -> bool {
    let cars: Vec<Vec3> = world.entities_of(EntityKind::Car).map(|e| e.position).collect();
    !cars.is_empty()
        && cars.iter().all(|car| {
            trace.ticks.iter().skip(from).any(|t| t.states.iter().any(|s| s.position.distance(*car) <= INSPECTION_RADIUS))
        })
}
