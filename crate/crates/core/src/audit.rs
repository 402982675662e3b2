//! Post-hoc safety checker over a recorded trace. Works from the trace
//! samples alone; it does not consult the planner.

use serde::{Deserialize, Serialize};

use crate::simulator::Trace;
use crate::world::WorldState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Separation { tick: u64, a: String, b: String, distance: f64 },
    Occupied { tick: u64, uav: String },
    Speed { tick: u64, uav: String, speed: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ticks: usize,
    pub min_pairwise_distance: f64,
    pub max_speed: f64,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every tick for pairwise separation `>= d_min`, every sample for
/// `point_is_free`, and every step for displacement `<= v_max·dt`.
pub fn audit_trace(trace: &Trace, world: &WorldState, d_min: f64, v_max: f64) -> AuditReport {
    let mut report =
        AuditReport { ticks: trace.ticks.len(), min_pairwise_distance: f64::INFINITY, max_speed: 0.0, violations: vec![] };
    let name = |i: usize| trace.ids[i].to_string();
    for (k, t) in trace.ticks.iter().enumerate() {
        let pos: Vec<_> = t.states.iter().map(|s| s.position).collect();
        for i in 0..pos.len() {
            let p = pos[i];
            let free = world.bounds.contains(p) && world.obstacles.iter().all(|o| {
                let d = p - o.center;
                let m = o.shape();
                let q = d.x * (m[0][0] * d.x + m[0][1] * d.y + m[0][2] * d.z)
                    + d.y * (m[1][0] * d.x + m[1][1] * d.y + m[1][2] * d.z)
                    + d.z * (m[2][0] * d.x + m[2][1] * d.y + m[2][2] * d.z);
                q > 1.0
            });
            if !free {
                report.violations.push(Violation::Occupied { tick: t.tick, uav: name(i) });
            }
            for j in i + 1..pos.len() {
                let d = ((p.x - pos[j].x).powi(2) + (p.y - pos[j].y).powi(2) + (p.z - pos[j].z).powi(2)).sqrt();
                report.min_pairwise_distance = report.min_pairwise_distance.min(d);
                if d < d_min {
                    report.violations.push(Violation::Separation { tick: t.tick, a: name(i), b: name(j), distance: d });
                }
            }
            if k > 0 {
                let prev = trace.ticks[k - 1].states[i].position;
                let dt = t.time - trace.ticks[k - 1].time;
                let speed = prev.distance(p) / dt;
                report.max_speed = report.max_speed.max(speed);
                if speed > v_max * (1.0 + 1e-9) {
                    report.violations.push(Violation::Speed { tick: t.tick, uav: name(i), speed });
                }
            }
        }
    }
    report
}
