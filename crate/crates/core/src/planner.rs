//! Collision-free velocity planning for every active goal.
//!
//! Priority-ordered reactive avoidance: each moving UAV starts from a
//! goal-seeking velocity plus inverse-square repulsion from close neighbours
//! and a sliding term along nearby obstacle surfaces, then picks the best of
//! a fixed candidate fan (rotations, climbs, slow-downs) that passes a
//! one-step lookahead. UAVs are resolved in priority order: a candidate must
//! keep `d_min` from the already-decided next positions of higher-priority
//! UAVs and from the current positions of the ones still undecided. Holding
//! position therefore always passes the lookahead, which is what makes the
//! separation guarantee inductive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::swarm::{SwarmState, UavId};
use crate::world::{point_is_free, Vec3, WorldState};

const SEPARATION_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorityRule {
    ByIndex,
    ByDistanceToGoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub d_min: f64,
    pub v_max: f64,
    /// Required obstacle clearance in ellipsoid-metric units.
    pub obstacle_margin: f64,
    pub repulsion_gain: f64,
    pub priority_rule: PriorityRule,
    /// Seconds a UAV may hold with an unreached goal before the right-hand
    /// deadlock bias kicks in.
    pub stall_timeout: f64,
    pub arrival_tolerance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            d_min: 1.0,
            v_max: 2.0,
            obstacle_margin: 0.2,
            repulsion_gain: 1.0,
            priority_rule: PriorityRule::ByIndex,
            stall_timeout: 5.0,
            arrival_tolerance: 0.15,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.d_min > 0.0 && self.v_max > 0.0 && self.obstacle_margin >= 0.0) {
            return Err(PlannerError::InvalidConfig);
        }
        Ok(())
    }
}

/// Seconds each UAV has been holding with an unreached goal. Owned by the
/// simulator and passed in so planning stays a pure function.
pub type StallClock = BTreeMap<UavId, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPlan {
    /// One entry per UAV, in swarm order.
    pub velocities: Vec<(UavId, Vec3)>,
    /// UAVs with a goal that could only hold position this tick.
    pub infeasible: Vec<UavId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("goal of {0} is not in free space")]
    GoalInObstacle(UavId),
    #[error("planner configuration needs d_min > 0, v_max > 0, obstacle_margin >= 0")]
    InvalidConfig,
    #[error("time step must be positive")]
    BadTimeStep,
}

struct Mover {
    index: usize,
    goal: Vec3,
}

pub fn plan_velocities(
    swarm: &SwarmState,
    world: &WorldState,
    cfg: &PlannerConfig,
    dt: f64,
    stall: &StallClock,
) -> Result<VelocityPlan, PlannerError> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(PlannerError::BadTimeStep);
    }
    let n = swarm.uavs.len();
    let mut movers = Vec::new();
    for (index, u) in swarm.uavs.iter().enumerate() {
        if let (Some(goal), true) = (u.goal, u.phase.has_goal()) {
            if !point_is_free(goal, world) {
                return Err(PlannerError::GoalInObstacle(u.id.clone()));
            }
            movers.push(Mover { index, goal });
        }
    }
    if cfg.priority_rule == PriorityRule::ByDistanceToGoal {
        movers.sort_by(|a, b| {
            let da = swarm.uavs[a.index].position.distance(a.goal);
            let db = swarm.uavs[b.index].position.distance(b.goal);
            da.total_cmp(&db).then(a.index.cmp(&b.index))
        });
    }

    // Goal-less UAVs are fixed points for this tick.
    let mut next: Vec<Option<Vec3>> = swarm
        .uavs
        .iter()
        .map(|u| if u.goal.is_some() && u.phase.has_goal() { None } else { Some(u.position) })
        .collect();
    let mut velocities = vec![Vec3::ZERO; n];
    let mut infeasible = Vec::new();

    for m in &movers {
        let u = &swarm.uavs[m.index];
        let stalled = stall.get(&u.id).copied().unwrap_or(0.0) > cfg.stall_timeout;
        let v = choose_velocity(swarm, world, cfg, dt, m, &next, stalled);
        let p_next = u.position + v * dt;
        if v == Vec3::ZERO && u.position.distance(m.goal) > cfg.arrival_tolerance {
            infeasible.push(u.id.clone());
        }
        velocities[m.index] = v;
        next[m.index] = Some(p_next);
    }

    Ok(VelocityPlan {
        velocities: swarm.uavs.iter().map(|u| u.id.clone()).zip(velocities).collect(),
        infeasible,
    })
}

fn choose_velocity(
    swarm: &SwarmState,
    world: &WorldState,
    cfg: &PlannerConfig,
    dt: f64,
    m: &Mover,
    next: &[Option<Vec3>],
    stalled: bool,
) -> Vec3 {
    let u = &swarm.uavs[m.index];
    let p = u.position;
    let to_goal = m.goal - p;
    let dist = to_goal.norm();
    if dist < 1e-12 {
        return Vec3::ZERO;
    }
    let goal_dir = to_goal * (1.0 / dist);
    let preferred = goal_dir * cfg.v_max.min(dist / dt);

    let mut repulsion = Vec3::ZERO;
    let reach = 3.0 * cfg.d_min;
    for (j, other) in swarm.uavs.iter().enumerate() {
        if j == m.index {
            continue;
        }
        let r = p - other.position;
        let d = r.norm();
        if d < reach && d > 1e-9 {
            repulsion += r * (cfg.repulsion_gain * (1.0 / (d * d) - 1.0 / (reach * reach)) / d);
        }
    }
    // Obstacles: cancel the inward component of the goal-seeking velocity
    // inside the margin band so the UAV slides along the surface.
    let band = cfg.obstacle_margin + 1.0;
    for o in &world.obstacles {
        let margin = o.margin(p);
        if margin < band {
            let normal = o.margin_gradient(p).normalized();
            let inward = preferred.dot(normal);
            if inward < 0.0 {
                let closeness = ((band - margin) / (band - cfg.obstacle_margin)).clamp(0.0, 1.0);
                repulsion += normal * (-inward * closeness);
            }
        }
    }

    let mut base = (preferred + repulsion).clamp_norm(cfg.v_max);
    if stalled {
        let heading = Vec3::new(goal_dir.x, goal_dir.y, 0.0).normalized();
        let right = if heading == Vec3::ZERO { Vec3::new(0.0, -1.0, 0.0) } else { Vec3::new(heading.y, -heading.x, 0.0) };
        base = (base + right * (0.5 * cfg.v_max)).clamp_norm(cfg.v_max);
    }
    let speed = base.norm();
    let score_dir = if speed > 1e-12 { base * (1.0 / speed) } else { goal_dir };

    let up = Vec3::new(0.0, 0.0, 1.0);
    let mut candidates = Vec::with_capacity(20);
    candidates.push(base);
    for deg in [30.0_f64, 60.0, 90.0, 120.0] {
        let a = deg.to_radians();
        candidates.push(base.rotate_z(-a));
        candidates.push(base.rotate_z(a));
    }
    let horizontal = Vec3::new(base.x, base.y, 0.0);
    candidates.push((horizontal * 0.5 + up * cfg.v_max).clamp_norm(cfg.v_max));
    candidates.push(up * cfg.v_max);
    candidates.push(base * 0.5);
    candidates.push(base * 0.25);
    candidates.push(preferred);

    let current_margin = world.margin(p);
    let goal_margin = world.margin(m.goal);
    let threshold = cfg.obstacle_margin.min(0.5 * goal_margin);

    let feasible = |v: Vec3| -> bool {
        let q = p + v * dt;
        if !world.bounds.contains(q) {
            return false;
        }
        let mq = world.margin(q);
        if !(mq > threshold || (mq >= current_margin && mq > 0.0)) {
            return false;
        }
        next.iter().enumerate().all(|(j, decided)| {
            if j == m.index {
                return true;
            }
            let other = decided.unwrap_or(swarm.uavs[j].position);
            q.distance(other) >= cfg.d_min + SEPARATION_SLACK
        })
    };

    let mut best = Vec3::ZERO;
    let mut best_score = 0.0;
    for v in candidates {
        let score = v.dot(score_dir);
        if score > best_score + 1e-12 && feasible(v) {
            best = v;
            best_score = score;
        }
    }
    best
}

/// True iff no UAV is still taking off, navigating or landing.
pub fn all_goals_reached(swarm: &SwarmState) -> bool {
    swarm.uavs.iter().all(|u| !u.phase.has_goal())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::{Phase, UavState};
    use crate::world::{Bounds, Ellipsoid};

    fn open_world() -> WorldState {
        WorldState::empty(Bounds::new(Vec3::new(-50.0, -50.0, 0.0), Vec3::new(50.0, 50.0, 30.0)).unwrap())
    }

    fn nav(id: &str, p: Vec3, goal: Vec3) -> UavState {
        UavState { id: id.into(), position: p, velocity: Vec3::ZERO, phase: Phase::Navigating, goal: Some(goal) }
    }

    #[test]
    fn unconstrained_uav_flies_at_full_speed() {
        let s = SwarmState { sim_time: 0.0, uavs: vec![nav("alfa", Vec3::new(0.0, 0.0, 5.0), Vec3::new(10.0, 0.0, 5.0))] };
        let plan = plan_velocities(&s, &open_world(), &PlannerConfig::default(), 0.1, &StallClock::new()).unwrap();
        assert_eq!(plan.velocities[0].1, Vec3::new(2.0, 0.0, 0.0));
        assert!(plan.infeasible.is_empty());
    }

    #[test]
    fn goal_inside_obstacle_is_rejected() {
        let mut w = open_world();
        w.obstacles.push(Ellipsoid::sphere(Vec3::new(10.0, 0.0, 5.0), 2.0).unwrap());
        let s = SwarmState { sim_time: 0.0, uavs: vec![nav("alfa", Vec3::new(0.0, 0.0, 5.0), Vec3::new(10.0, 0.0, 5.0))] };
        let err = plan_velocities(&s, &w, &PlannerConfig::default(), 0.1, &StallClock::new()).unwrap_err();
        assert_eq!(err, PlannerError::GoalInObstacle("alfa".into()));
    }

    #[test]
    fn goalless_and_grounded_uavs_get_zero() {
        let s = SwarmState {
            sim_time: 0.0,
            uavs: vec![
                UavState::grounded("alfa".into(), Vec3::ZERO),
                UavState { phase: Phase::Hovering, ..UavState::grounded("bravo".into(), Vec3::new(5.0, 0.0, 2.0)) },
            ],
        };
        let plan = plan_velocities(&s, &open_world(), &PlannerConfig::default(), 0.1, &StallClock::new()).unwrap();
        assert!(plan.velocities.iter().all(|(_, v)| *v == Vec3::ZERO));
    }

    #[test]
    fn planning_is_deterministic() {
        let s = SwarmState {
            sim_time: 0.0,
            uavs: vec![
                nav("alfa", Vec3::new(0.0, 0.0, 5.0), Vec3::new(10.0, 0.0, 5.0)),
                nav("bravo", Vec3::new(10.0, 0.0, 5.0), Vec3::new(0.0, 0.0, 5.0)),
                nav("charlie", Vec3::new(5.0, 1.5, 5.0), Vec3::new(5.0, -8.0, 5.0)),
            ],
        };
        let cfg = PlannerConfig { priority_rule: PriorityRule::ByDistanceToGoal, ..Default::default() };
        let a = plan_velocities(&s, &open_world(), &cfg, 0.1, &StallClock::new()).unwrap();
        let b = plan_velocities(&s, &open_world(), &cfg, 0.1, &StallClock::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let s = SwarmState { sim_time: 0.0, uavs: vec![] };
        let cfg = PlannerConfig { d_min: 0.0, ..Default::default() };
        assert_eq!(plan_velocities(&s, &open_world(), &cfg, 0.1, &StallClock::new()), Err(PlannerError::InvalidConfig));
    }

    #[test]
    fn completion_probe() {
        let hover = |id: &str| UavState { phase: Phase::Hovering, ..UavState::grounded(id.into(), Vec3::ZERO) };
        assert!(all_goals_reached(&SwarmState { sim_time: 0.0, uavs: vec![] }));
        assert!(all_goals_reached(&SwarmState { sim_time: 0.0, uavs: vec![hover("a"), hover("b")] }));
        let s = SwarmState { sim_time: 0.0, uavs: vec![hover("a"), nav("b", Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0))] };
        assert!(!all_goals_reached(&s));
    }
}
