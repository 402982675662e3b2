//! Hierarchical LLM control of a simulated UAV swarm.
//!
//! A Coordinator turns an operator instruction into an ordered plan of API
//! calls; a Supervisor executes it in cycles against a deterministic
//! simulator whose planner keeps UAVs separated and out of obstacles.

pub mod actions;
pub mod audit;
pub mod coordinator;
pub mod harness;
pub mod history;
pub mod llm;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod simulator;
pub mod supervisor;
pub mod swarm;
pub mod world;

pub use actions::{ActionCall, ActionRegistry, RawCall};
pub use coordinator::{Instruction, TaskPlan};
pub use pipeline::{AblationMode, Pipeline, PipelineConfig};
pub use simulator::{SimConfig, SimHandle, Simulator, Trace};
pub use supervisor::{ExecutionReport, ScopedMemory};
pub use swarm::{Phase, SwarmState, UavId, UavState};
pub use world::{Ellipsoid, Vec3, WorldState};
