//! Seeded random missions for the planner safety audit: random free spawns,
//! takeoff, then rounds of random free goals.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionCall, CallOrigin};
use crate::audit::{audit_trace, AuditReport};
use crate::par::{map_indexed, Execution};
use crate::simulator::{SimConfig, SimError, Simulator};
use crate::swarm::UavId;
use crate::world::{point_is_free, Vec3, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub rounds: usize,
    /// Simulated seconds allowed per goal round.
    pub round_time: f64,
    pub goal_z: (f64, f64),
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self { rounds: 2, round_time: 90.0, goal_z: (1.5, 15.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzOutcome {
    pub seed: u64,
    pub swarm_size: usize,
    /// Goals reached over all rounds.
    pub arrivals: usize,
    pub goals: usize,
    pub audit: AuditReport,
    pub trace_digest: String,
}

fn sample_points(
    rng: &mut ChaCha8Rng,
    world: &WorldState,
    n: usize,
    z: impl Fn(&mut ChaCha8Rng) -> f64,
    min_sep: f64,
) -> Vec<Vec3> {
    let (lo, hi) = (world.bounds.min, world.bounds.max);
    let mut pts: Vec<Vec3> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = Vec3::new(rng.random_range(lo.x + 5.0..hi.x - 5.0), rng.random_range(lo.y + 5.0..hi.y - 5.0), z(rng));
        if point_is_free(p, world) && pts.iter().all(|q| q.distance(p) >= min_sep) {
            pts.push(p);
        }
    }
    pts
}

pub fn fuzz_scenario(world: &Arc<WorldState>, n: usize, seed: u64, cfg: &FuzzConfig) -> Result<FuzzOutcome, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground = world.bounds.min.z;
    let ids = super::callsigns(n);
    let spawns = sample_points(&mut rng, world, n, |_| ground, 2.0);
    let mut sim_cfg = SimConfig::new(ids.iter().cloned().zip(spawns).collect());
    sim_cfg.seed = seed;
    let d_min = sim_cfg.planner.d_min;
    let v_max = sim_cfg.limits.v_max;
    let mut sim = Simulator::new(world.clone(), sim_cfg)?;
    let call = |id: &UavId, action: &str, args: Vec<f64>| ActionCall {
        target_uav: id.clone(),
        action: action.into(),
        args,
        origin: CallOrigin::SupervisorIssued,
    };
    for id in &ids {
        sim.dispatch(&call(id, "arm_takeoff", vec![]));
    }
    sim.advance_until_idle(30.0)?;
    let (zlo, zhi) = cfg.goal_z;
    let mut arrivals = 0;
    for _ in 0..cfg.rounds {
        let goals = sample_points(&mut rng, world, n, |r| r.random_range(zlo..zhi), 2.0 * d_min);
        for (id, g) in ids.iter().zip(&goals) {
            sim.dispatch(&call(id, "goto", vec![g.x, g.y, g.z]));
        }
        sim.advance_until_idle(cfg.round_time)?;
        arrivals += sim.swarm().uavs.iter().filter(|u| u.goal.is_none()).count();
    }
    let trace = sim.into_trace();
    Ok(FuzzOutcome {
        seed,
        swarm_size: n,
        arrivals,
        goals: n * cfg.rounds,
        audit: audit_trace(&trace, world, d_min, v_max),
        trace_digest: trace.digest(),
    })
}

/// `count` scenarios with seeds `base_seed..base_seed+count`.
pub fn fuzz_suite(
    world: &Arc<WorldState>,
    n: usize,
    base_seed: u64,
    count: usize,
    cfg: &FuzzConfig,
    exec: Execution,
) -> Vec<Result<FuzzOutcome, String>> {
    map_indexed(count, exec, |i| fuzz_scenario(world, n, base_seed + i as u64, cfg).map_err(|e| e.to_string()))
}
