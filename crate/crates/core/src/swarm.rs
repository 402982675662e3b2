//! Per-UAV kinematic state and the flight-phase machine driven by the three
//! action primitives.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionCall;
use crate::world::Vec3;

/// NATO-style callsigns handed out in swarm order.
pub const CALLSIGNS: [&str; 12] = [
    "alfa", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett", "kilo", "lima",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UavId(Arc<str>);

impl UavId {
    pub fn new(callsign: &str) -> Self {
        assert!(!callsign.is_empty(), "callsign must be nonempty");
        Self(Arc::from(callsign))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UavId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UavId {
    fn from(s: &str) -> Self {
        UavId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Grounded,
    TakingOff,
    Hovering,
    Navigating,
    Landing,
}

impl Phase {
    pub fn is_airborne(self) -> bool {
        !matches!(self, Phase::Grounded)
    }

    /// Phases that carry an active goal.
    pub fn has_goal(self) -> bool {
        matches!(self, Phase::TakingOff | Phase::Navigating | Phase::Landing)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Grounded => "Grounded",
            Phase::TakingOff => "TakingOff",
            Phase::Hovering => "Hovering",
            Phase::Navigating => "Navigating",
            Phase::Landing => "Landing",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kinematic limits shared by the phase machine and the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_max: f64,
    pub takeoff_altitude: f64,
    pub arrival_tolerance: f64,
    pub ground_z: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { v_max: 2.0, takeoff_altitude: 2.0, arrival_tolerance: 0.15, ground_z: 0.0 }
    }
}

/// Landing only completes once the vehicle is this close to the ground, so
/// the ground snap never moves it further than a rounding error.
const TOUCHDOWN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub id: UavId,
    pub position: Vec3,
    pub velocity: Vec3,
    pub phase: Phase,
    pub goal: Option<Vec3>,
}

impl UavState {
    pub fn grounded(id: UavId, position: Vec3) -> Self {
        Self { id, position, velocity: Vec3::ZERO, phase: Phase::Grounded, goal: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub sim_time: f64,
    pub uavs: Vec<UavState>,
}

impl SwarmState {
    pub fn get(&self, id: &str) -> Option<&UavState> {
        self.uavs.iter().find(|u| u.id.as_str() == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// Text telemetry block injected into prompts.
    pub fn render(&self) -> String {
        let mut out = format!("sim_time={:.1}s\n", self.sim_time);
        for u in &self.uavs {
            let goal = u.goal.map(|g| g.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{} pos={} vel={} phase={} goal={}\n",
                u.id, u.position, u.velocity, u.phase, goal
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SwarmError {
    #[error("{uav}: cannot {action} while {phase}")]
    InvalidPhaseTransition { uav: UavId, action: String, phase: Phase },
    #[error("call targets {call} but state belongs to {state}")]
    WrongUav { call: String, state: UavId },
    #[error("{0}: no such action")]
    UnknownAction(String),
    #[error("{action}: expected {expected} arguments, got {got}")]
    ArityMismatch { action: String, expected: usize, got: usize },
}

/// Executes one primitive against a single UAV's state.
pub fn apply_action(s: &UavState, a: &ActionCall, limits: &Limits) -> Result<UavState, SwarmError> {
    if a.target_uav != s.id {
        return Err(SwarmError::WrongUav { call: a.target_uav.to_string(), state: s.id.clone() });
    }
    let invalid = || SwarmError::InvalidPhaseTransition { uav: s.id.clone(), action: a.action.clone(), phase: s.phase };
    let arity = |expected: usize| {
        if a.args.len() == expected {
            Ok(())
        } else {
            Err(SwarmError::ArityMismatch { action: a.action.clone(), expected, got: a.args.len() })
        }
    };
    let mut next = s.clone();
    match a.action.as_str() {
        "arm_takeoff" => {
            arity(0)?;
            if s.phase != Phase::Grounded {
                return Err(invalid());
            }
            next.phase = Phase::TakingOff;
            next.goal = Some(Vec3::new(s.position.x, s.position.y, limits.ground_z + limits.takeoff_altitude));
        }
        "goto" => {
            arity(3)?;
            if !matches!(s.phase, Phase::Hovering | Phase::Navigating) {
                return Err(invalid());
            }
            next.phase = Phase::Navigating;
            next.goal = Some(Vec3::new(a.args[0], a.args[1], a.args[2]));
        }
        "land" => {
            arity(0)?;
            if !matches!(s.phase, Phase::TakingOff | Phase::Hovering | Phase::Navigating) {
                return Err(invalid());
            }
            next.phase = Phase::Landing;
            next.goal = Some(Vec3::new(s.position.x, s.position.y, limits.ground_z));
        }
        other => return Err(SwarmError::UnknownAction(other.to_string())),
    }
    Ok(next)
}

/// Integrates one tick of a commanded velocity and advances the phase on
/// arrival.
pub fn phase_tick(s: &UavState, commanded: Vec3, dt: f64, limits: &Limits) -> UavState {
    debug_assert!(dt > 0.0);
    let mut next = s.clone();
    next.position = s.position + commanded * dt;
    next.velocity = commanded;
    if let Some(goal) = s.goal {
        let arrived = match s.phase {
            Phase::Landing => next.position.z - limits.ground_z <= TOUCHDOWN_TOLERANCE,
            _ => next.position.distance(goal) <= limits.arrival_tolerance,
        };
        if arrived {
            next.goal = None;
            next.velocity = Vec3::ZERO;
            next.phase = match s.phase {
                Phase::Landing => {
                    next.position.z = limits.ground_z;
                    Phase::Grounded
                }
                _ => Phase::Hovering,
            };
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::CallOrigin;

    fn call(uav: &str, action: &str, args: &[f64]) -> ActionCall {
        ActionCall { target_uav: uav.into(), action: action.into(), args: args.to_vec(), origin: CallOrigin::SupervisorIssued }
    }

    fn state(phase: Phase, p: Vec3) -> UavState {
        UavState { id: "alfa".into(), position: p, velocity: Vec3::ZERO, phase, goal: None }
    }

    #[test]
    fn takeoff_targets_default_altitude() {
        let s = UavState::grounded("alfa".into(), Vec3::ZERO);
        let n = apply_action(&s, &call("alfa", "arm_takeoff", &[]), &Limits::default()).unwrap();
        assert_eq!(n.phase, Phase::TakingOff);
        assert_eq!(n.goal, Some(Vec3::new(0.0, 0.0, 2.0)));
    }

    #[test]
    fn goto_from_hover_navigates() {
        let s = state(Phase::Hovering, Vec3::new(0.0, 0.0, 2.0));
        let n = apply_action(&s, &call("alfa", "goto", &[5.0, 5.0, 3.0]), &Limits::default()).unwrap();
        assert_eq!(n.phase, Phase::Navigating);
        assert_eq!(n.goal, Some(Vec3::new(5.0, 5.0, 3.0)));
        // retargeting while navigating
        let r = apply_action(&n, &call("alfa", "goto", &[1.0, 1.0, 1.0]), &Limits::default()).unwrap();
        assert_eq!(r.goal, Some(Vec3::new(1.0, 1.0, 1.0)));
    }

    #[test]
    fn invalid_transitions_are_reported() {
        let l = Limits::default();
        let g = UavState::grounded("alfa".into(), Vec3::ZERO);
        assert!(matches!(apply_action(&g, &call("alfa", "land", &[]), &l), Err(SwarmError::InvalidPhaseTransition { .. })));
        assert!(matches!(
            apply_action(&g, &call("alfa", "goto", &[1.0, 1.0, 1.0]), &l),
            Err(SwarmError::InvalidPhaseTransition { .. })
        ));
        let h = state(Phase::Hovering, Vec3::new(0.0, 0.0, 2.0));
        assert!(matches!(
            apply_action(&h, &call("alfa", "arm_takeoff", &[]), &l),
            Err(SwarmError::InvalidPhaseTransition { .. })
        ));
        assert!(matches!(apply_action(&h, &call("bravo", "land", &[]), &l), Err(SwarmError::WrongUav { .. })));
    }

    #[test]
    fn hovering_with_zero_velocity_stays_put() {
        let s = state(Phase::Hovering, Vec3::new(1.0, 2.0, 3.0));
        let n = phase_tick(&s, Vec3::ZERO, 0.1, &Limits::default());
        assert_eq!(n.position, s.position);
        assert_eq!(n.phase, Phase::Hovering);
    }

    #[test]
    fn navigation_arrives_within_tolerance() {
        let mut s = state(Phase::Navigating, Vec3::new(0.0, 0.0, 2.0));
        s.goal = Some(Vec3::new(1.0, 0.0, 2.0));
        let n = phase_tick(&s, Vec3::new(1.0, 0.0, 0.0), 1.0, &Limits::default());
        assert!(n.position.distance(Vec3::new(1.0, 0.0, 2.0)) <= 0.15);
        assert_eq!(n.phase, Phase::Hovering);
        assert_eq!(n.goal, None);
    }

    #[test]
    fn takeoff_integrates_to_hover() {
        let l = Limits::default();
        let s = apply_action(&UavState::grounded("alfa".into(), Vec3::ZERO), &call("alfa", "arm_takeoff", &[]), &l).unwrap();
        let one = phase_tick(&s, Vec3::new(0.0, 0.0, 1.0), 1.0, &l);
        assert_eq!(one.phase, Phase::TakingOff);
        let two = phase_tick(&one, Vec3::new(0.0, 0.0, 1.0), 1.0, &l);
        assert_eq!(two.phase, Phase::Hovering);
        assert_eq!(two.position.z, 2.0);
    }

    #[test]
    fn landing_reaches_grounded() {
        let l = Limits::default();
        let s = apply_action(&state(Phase::Hovering, Vec3::new(0.0, 0.0, 0.2)), &call("alfa", "land", &[]), &l).unwrap();
        let n = phase_tick(&s, Vec3::new(0.0, 0.0, -2.0), 0.1, &l);
        assert_eq!(n.phase, Phase::Grounded);
        assert_eq!(n.velocity, Vec3::ZERO);
        assert_eq!(n.position.z, 0.0);
    }
}
