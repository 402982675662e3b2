//! Scripted model behaviour for the benchmark tasks.
//!
//! Coordinator rules match on the final `INSTRUCTION:` line. Supervisor
//! rules match on the numbered call list of the plan plus the final
//! `CYCLE: k` line, so one rule answers one cycle of one plan regardless of
//! the telemetry in between.

use regex::escape;

use super::tasks::{task1_layout, task2_assignment, task2_targets, TaskId, TaskSpec, TASK0_INSTRUCTION};
use crate::actions::RawCall;
use crate::coordinator::{render_output, CoordinatorOutput};
use crate::llm::{Script, ScriptRule};
use crate::pipeline::AblationMode;
use crate::supervisor::{render_decision, SupervisorOutput};
use crate::swarm::UavId;
use crate::world::{Vec3, WorldState};

pub const ALFA_TAKEOFF: &str = "Alfa, take off";

fn takeoff(id: &UavId) -> RawCall {
    RawCall { uav: id.to_string(), action: "arm_takeoff".into(), args: vec![] }
}

fn goto(id: &UavId, p: Vec3) -> RawCall {
    RawCall { uav: id.to_string(), action: "goto".into(), args: vec![p.x, p.y, p.z] }
}

/// Coordinator answer plus the Supervisor's issue list for each cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPlan {
    pub instruction: String,
    pub reasoning: String,
    pub calls: Vec<RawCall>,
    pub cycles: Vec<Vec<RawCall>>,
}

impl ScriptedPlan {
    fn coordinator_rule(&self) -> ScriptRule {
        let text = render_output(&CoordinatorOutput { reasoning: self.reasoning.clone(), calls: self.calls.clone() });
        ScriptRule::regex(format!(r"(?s)\nINSTRUCTION: {}\z", escape(&self.instruction)), text)
    }

    /// `PLAN plan-NNNN:` followed by exactly this call list.
    fn plan_prefix(&self) -> String {
        let calls: String = if self.calls.is_empty() {
            "  (no calls)\n".into()
        } else {
            self.calls.iter().enumerate().map(|(i, c)| format!("  {}. {}\n", i + 1, c)).collect()
        };
        format!(r"(?s)\APLAN plan-\d+:\n{}COORDINATOR REASONING:\n", escape(&calls))
    }

    fn supervisor_rules(&self) -> Vec<ScriptRule> {
        let prefix = self.plan_prefix();
        let mut rules: Vec<ScriptRule> = self
            .cycles
            .iter()
            .enumerate()
            .map(|(k, issue)| {
                let note = if issue.is_empty() {
                    "Waiting for the issued calls to finish.".to_string()
                } else {
                    format!("Issuing {} call(s) for this stage.", issue.len())
                };
                let text = render_decision(&SupervisorOutput { note, issue: issue.clone(), done: false });
                ScriptRule::regex(format!(r"{prefix}.*\nCYCLE: {k}\z"), text)
            })
            .collect();
        // any later cycle: everything has been issued
        let later = format!(r"{prefix}.*\nCYCLE: (?:{})\z", later_cycles(self.cycles.len()));
        rules.push(ScriptRule::regex(
            later,
            render_decision(&SupervisorOutput { note: "All plan calls are completed.".into(), issue: vec![], done: true }),
        ));
        rules
    }

    pub fn rules(&self) -> Vec<ScriptRule> {
        let mut r = vec![self.coordinator_rule()];
        r.extend(self.supervisor_rules());
        r
    }

    /// Like [`rules`](Self::rules), but after the last issuing cycle the
    /// Supervisor keeps waiting while its record shows a call in progress.
    pub fn rules_waiting_for_completion(&self) -> Vec<ScriptRule> {
        let mut r = self.rules();
        let wait = format!(
            r"{}.*-> accepted, in progress\n.*\nCYCLE: (?:{})\z",
            self.plan_prefix(),
            later_cycles(self.cycles.len())
        );
        let text = render_decision(&SupervisorOutput {
            note: "Waiting for the issued calls to finish.".into(),
            issue: vec![],
            done: false,
        });
        r.insert(r.len() - 1, ScriptRule::regex(wait, text));
        r
    }
}

/// Regex alternation for every cycle index `>= first` (`first <= 10`).
fn later_cycles(first: usize) -> String {
    debug_assert!(first <= 10);
    let mut alts: Vec<String> = (first..10).map(|k| k.to_string()).collect();
    alts.push("[1-9][0-9]+".into());
    alts.join("|")
}

pub fn task0_plan(ids: &[UavId]) -> ScriptedPlan {
    ScriptedPlan {
        instruction: TASK0_INSTRUCTION.into(),
        reasoning: format!(
            "The instruction addresses every drone. All {} UAVs are grounded, so each receives one arm_takeoff. \
             The takeoffs are independent and can all be issued at once.",
            ids.len()
        ),
        calls: ids.iter().map(takeoff).collect(),
        cycles: vec![ids.iter().map(takeoff).collect()],
    }
}

pub fn task1_plan(world: &WorldState, ids: &[UavId], mode: AblationMode) -> ScriptedPlan {
    let layout = task1_layout(world, ids);
    let a: Vec<String> = layout.group_a.iter().map(|(id, _)| id.to_string()).collect();
    let b: Vec<String> = layout.group_b.iter().map(|(id, _)| id.to_string()).collect();
    let mut calls = Vec::new();
    for (id, wps) in &layout.group_a {
        calls.extend(wps.iter().map(|p| goto(id, *p)));
    }
    calls.extend(layout.group_b.iter().map(|(id, p)| goto(id, *p)));
    let stage = |k: usize| layout.group_a.iter().map(|(id, wps)| goto(id, wps[k])).collect::<Vec<_>>();
    let group_b: Vec<RawCall> = layout.group_b.iter().map(|(id, p)| goto(id, *p)).collect();
    let cycles = if mode == AblationMode::NoReasoning {
        // without the reasoning the plan reads as an unordered set: every
        // UAV gets its first target immediately
        let mut first = stage(0);
        first.extend(group_b);
        vec![first, stage(1), stage(2)]
    } else {
        vec![stage(0), stage(1), stage(2), group_b]
    };
    ScriptedPlan {
        instruction: super::tasks::TASK1_INSTRUCTION.into(),
        reasoning: format!(
            "Split by callsign order: group A is {} and group B is {}. Group A flies a loop over the north park at \
             8 m: each drone visits its three waypoints in order, one waypoint per stage. Group B must hold its \
             position until every group A drone has reached its third waypoint, and only then moves to the south \
             park grid at 6 m.",
            a.join(", "),
            b.join(", ")
        ),
        calls,
        cycles,
    }
}

pub fn task2_plan(world: &WorldState, ids: &[UavId]) -> ScriptedPlan {
    let targets = task2_targets(world);
    let assignment = task2_assignment(ids.len(), targets.len());
    let mut calls = Vec::new();
    let depth = assignment.iter().map(Vec::len).max().unwrap_or(0);
    let mut cycles = vec![Vec::new(); depth];
    for (id, cars) in ids.iter().zip(&assignment) {
        for (k, &c) in cars.iter().enumerate() {
            calls.push(goto(id, targets[c]));
            cycles[k].push(goto(id, targets[c]));
        }
    }
    let reasoning = if depth > 1 {
        format!(
            "There are {} cars and only {} drones, so each drone inspects {depth} cars one after the other, \
             hovering 1.5 m above each. A drone goes to its next car only after reaching the previous one.",
            targets.len(),
            ids.len()
        )
    } else {
        format!(
            "There are {} cars and {} drones. Each car gets its own drone, which hovers 1.5 m above it. \
             All inspections can start at once; spare drones stay where they are.",
            targets.len(),
            ids.len()
        )
    };
    ScriptedPlan { instruction: super::tasks::TASK2_INSTRUCTION.into(), reasoning, calls, cycles }
}

pub fn scripted_plan(task: &TaskSpec, mode: AblationMode, world: &WorldState, ids: &[UavId]) -> ScriptedPlan {
    match task.id {
        TaskId::Task0 => task0_plan(ids),
        TaskId::Task1 => task1_plan(world, ids, mode),
        TaskId::Task2 => task2_plan(world, ids),
    }
}

/// Script for one benchmark trial: the warmup plan (if any) and the task.
pub fn task_script(task: &TaskSpec, mode: AblationMode, world: &WorldState, ids: &[UavId]) -> Script {
    let mut rules = Vec::new();
    if task.warmup().is_some() {
        rules.extend(task0_plan(ids).rules());
    }
    rules.extend(scripted_plan(task, mode, world, ids).rules());
    Script::new(rules)
}

pub fn alfa_takeoff_plan() -> ScriptedPlan {
    let alfa = UavId::new("alfa");
    ScriptedPlan {
        instruction: ALFA_TAKEOFF.into(),
        reasoning: "The pilot addresses alfa only. Alfa is grounded, so it receives a single arm_takeoff; the other \
                    drones stay where they are."
            .into(),
        calls: vec![takeoff(&alfa)],
        cycles: vec![vec![takeoff(&alfa)]],
    }
}

pub const FIND_THE_DOG: &str = "Find the dog.";

/// Height above the target the finder hovers at.
const FINDER_HEIGHT: f64 = 3.0;

/// The semantic-search example: a scene with a `dog` entity. The closest
/// drone takes off and hovers over it once airborne.
pub fn find_the_dog_plan(world: &WorldState, spawns: &[(UavId, Vec3)]) -> Option<ScriptedPlan> {
    let dog = world.entity("dog")?.position;
    let (finder, _) = spawns.iter().min_by(|a, b| a.1.distance(dog).total_cmp(&b.1.distance(dog)))?;
    let above = Vec3::new(dog.x, dog.y, dog.z + FINDER_HEIGHT);
    Some(ScriptedPlan {
        instruction: FIND_THE_DOG.into(),
        reasoning: format!(
            "The scene lists a dog at ({:.1}, {:.1}). {finder} is the closest drone, so it takes off and, once \
             hovering, flies to {FINDER_HEIGHT} m above the dog. The other drones stay grounded.",
            dog.x, dog.y
        ),
        calls: vec![takeoff(finder), goto(finder, above)],
        cycles: vec![vec![takeoff(finder)], vec![goto(finder, above)]],
    })
}

pub const REFUSAL_REASONING: &str =
    "I cannot map this request to any available action. No UAV is commanded; please rephrase the instruction.";

/// Interactive demo: "Alfa, take off", the three task instructions for this
/// swarm, "Find the dog." when the scene has one, and a refusal for
/// anything else.
pub fn demo_script(world: &WorldState, ids: &[UavId]) -> Script {
    let mut rules = alfa_takeoff_plan().rules();
    if let Some(p) = find_the_dog_plan(world, &super::spawn_positions(world, ids.len(), 0, 0)) {
        rules.extend(p.rules_waiting_for_completion());
    }
    rules.extend(task0_plan(ids).rules());
    rules.extend(task1_plan(world, ids, AblationMode::Full).rules());
    rules.extend(task2_plan(world, ids).rules());
    rules.extend(refusal_rules());
    Script::new(rules)
}

/// Catch-all rules: an empty plan for any unmatched instruction.
pub fn refusal_rules() -> Vec<ScriptRule> {
    let text = render_output(&CoordinatorOutput { reasoning: REFUSAL_REASONING.into(), calls: vec![] });
    vec![ScriptRule::regex(r"(?s)\nINSTRUCTION: [^\n]*\z", text)]
}
