//! The action registry: machine-checked schemas for each primitive and the
//! API documentation block shown to the language models.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::swarm::{Phase, SwarmState, UavId};
use crate::world::{point_is_free, Vec3, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Meters,
    UavId,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Meters => "meters",
            ParamKind::UavId => "uav-id",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub params: Vec<(String, ParamKind)>,
    pub description: String,
    pub allowed_phases: Vec<Phase>,
}

impl ActionSpec {
    pub fn signature(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|(n, k)| format!("{n}: {}", k.as_str()))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{}({params})", self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRegistry {
    specs: Vec<ActionSpec>,
}

impl Default for ActionRegistry {
    fn default() -> Self {
        let meters = |n: &str| (n.to_string(), ParamKind::Meters);
        Self {
            specs: vec![
                ActionSpec {
                    name: "arm_takeoff".into(),
                    params: vec![],
                    description: "Arm the motors and climb vertically to the takeoff altitude.".into(),
                    allowed_phases: vec![Phase::Grounded],
                },
                ActionSpec {
                    name: "goto".into(),
                    params: vec![meters("x"), meters("y"), meters("z")],
                    description: "Fly to the world-frame position (x, y, z); collision avoidance is automatic.".into(),
                    allowed_phases: vec![Phase::Hovering, Phase::Navigating],
                },
                ActionSpec {
                    name: "land".into(),
                    params: vec![],
                    description: "Descend vertically and land below the current position.".into(),
                    allowed_phases: vec![Phase::TakingOff, Phase::Hovering, Phase::Navigating],
                },
            ],
        }
    }
}

impl ActionRegistry {
    pub fn empty() -> Self {
        Self { specs: Vec::new() }
    }

    /// Adds a spec; names must be unique.
    pub fn register(&mut self, spec: ActionSpec) -> Result<(), ValidationError> {
        if self.get(&spec.name).is_some() {
            return Err(ValidationError::DuplicateAction(spec.name));
        }
        self.specs.push(spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ActionSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn specs(&self) -> &[ActionSpec] {
        &self.specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallOrigin {
    CoordinatorPlan,
    SupervisorIssued,
}

/// One validated primitive bound to a UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCall {
    pub target_uav: UavId,
    pub action: String,
    pub args: Vec<f64>,
    pub origin: CallOrigin,
}

impl ActionCall {
    pub fn to_raw(&self) -> RawCall {
        RawCall { uav: self.target_uav.to_string(), action: self.action.clone(), args: self.args.clone() }
    }

    /// Same UAV, action and arguments, regardless of origin.
    pub fn same_command(&self, other: &ActionCall) -> bool {
        self.target_uav == other.target_uav && self.action == other.action && self.args == other.args
    }
}

impl fmt::Display for ActionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_raw().fmt(f)
    }
}

/// A call as it appears on the wire in model output: `{uav, action, args}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCall {
    pub uav: String,
    pub action: String,
    #[serde(default)]
    pub args: Vec<f64>,
}

impl fmt::Display for RawCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args = self.args.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(", ");
        write!(f, "{} {}({})", self.uav, self.action, args)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ValidationError {
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("unknown UAV {0:?}")]
    UnknownUav(String),
    #[error("{action}: expected {expected} arguments, got {got}")]
    ArityMismatch { action: String, expected: usize, got: usize },
    #[error("{action}: target {target:?} is outside the world bounds or not finite")]
    OutOfBoundsTarget { action: String, target: [f64; 3] },
    #[error("{action}: target {target:?} lies inside an obstacle")]
    GoalInObstacle { action: String, target: [f64; 3] },
    #[error("action {0:?} registered twice")]
    DuplicateAction(String),
}

/// Checks a raw model-emitted call against the registry, the live swarm and
/// the world before anything reaches the simulator.
pub fn validate_call(
    raw: &RawCall,
    registry: &ActionRegistry,
    swarm: &SwarmState,
    world: &WorldState,
    origin: CallOrigin,
) -> Result<ActionCall, ValidationError> {
    let spec = registry.get(&raw.action).ok_or_else(|| ValidationError::UnknownAction(raw.action.clone()))?;
    if !swarm.contains(&raw.uav) {
        return Err(ValidationError::UnknownUav(raw.uav.clone()));
    }
    if raw.args.len() != spec.params.len() {
        return Err(ValidationError::ArityMismatch {
            action: raw.action.clone(),
            expected: spec.params.len(),
            got: raw.args.len(),
        });
    }
    if raw.action == "goto" {
        let target = Vec3::new(raw.args[0], raw.args[1], raw.args[2]);
        if !target.is_finite() || !world.bounds.contains(target) {
            return Err(ValidationError::OutOfBoundsTarget { action: raw.action.clone(), target: target.to_array() });
        }
        if !point_is_free(target, world) {
            return Err(ValidationError::GoalInObstacle { action: raw.action.clone(), target: target.to_array() });
        }
    } else if raw.args.iter().any(|a| !a.is_finite()) {
        return Err(ValidationError::OutOfBoundsTarget { action: raw.action.clone(), target: [f64::NAN; 3] });
    }
    Ok(ActionCall { target_uav: UavId::new(&raw.uav), action: raw.action.clone(), args: raw.args.clone(), origin })
}

pub const NO_ACTIONS: &str = "NO ACTIONS AVAILABLE";

/// Deterministic API listing, one action per line in registry order:
/// `name(param: kind, ...) -- description [allowed: Phase, ...]`.
pub fn render_api_doc(registry: &ActionRegistry) -> String {
    if registry.specs.is_empty() {
        return format!("{NO_ACTIONS}\n");
    }
    let mut out = format!("AVAILABLE ACTIONS ({}):\n", registry.specs.len());
    for s in &registry.specs {
        let phases = s.allowed_phases.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", ");
        out.push_str(&format!("{} -- {} [allowed: {}]\n", s.signature(), s.description, phases));
    }
    out
}
