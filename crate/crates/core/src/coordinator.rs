//! Upper tier: instruction + telemetry + history → reasoning and a set-like
//! plan of validated calls. Timing is left to the Supervisor.
//!
//! Output grammar (sections may appear in either order, code fences and
//! surrounding prose are ignored):
//!
//! ```text
//! REASONING:
//! <free text, one or more lines>
//! PLAN:
//! [{"uav": "alfa", "action": "goto", "args": [10.0, 20.0, 5.0]}, ...]
//! ```

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{validate_call, ActionCall, ActionRegistry, CallOrigin, RawCall, ValidationError};
use crate::history::{CoordinatorHistory, HistoryEntry, HistoryError, DEFAULT_HISTORY_BUDGET};
use crate::llm::{AgentHandle, AskError, BackendError};
use crate::swarm::SwarmState;
use crate::world::{EntityKind, Vec3, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub issued_at: f64,
}

impl Instruction {
    pub fn new(text: impl Into<String>, issued_at: f64) -> Result<Self, CoordinatorError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(CoordinatorError::EmptyInstruction);
        }
        Ok(Self { text, issued_at })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub plan_id: String,
    pub reasoning: String,
    pub calls: Vec<ActionCall>,
    pub source_instruction: Instruction,
}

impl TaskPlan {
    /// Numbered call list as shown to the Supervisor.
    pub fn render_calls(&self) -> String {
        if self.calls.is_empty() {
            return "  (no calls)\n".into();
        }
        self.calls.iter().enumerate().map(|(i, c)| format!("  {}. {}\n", i + 1, c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub instruction: String,
    pub ideal_reasoning: String,
    pub ideal_plan: Vec<RawCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no REASONING section")]
    MissingReasoning,
    #[error("no PLAN section with a JSON array")]
    MissingPlan,
    #[error("plan entry {index} is malformed: {detail}")]
    MalformedCall { index: usize, detail: String },
}

/// Parsed model output before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorOutput {
    pub reasoning: String,
    pub calls: Vec<RawCall>,
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("coordinator output unparsable after {attempts} attempts: {error}")]
    ParseFailure { attempts: usize, error: ParseError, output: String },
    #[error("plan rejected: {}", .rejected.iter().map(|(i, c, e)| format!("#{i} {c}: {e}")).collect::<Vec<_>>().join("; "))]
    ValidationFailure { reasoning: String, rejected: Vec<(usize, RawCall, ValidationError)> },
    #[error(transparent)]
    History(#[from] HistoryError),
}

impl From<AskError<ParseError>> for CoordinatorError {
    fn from(e: AskError<ParseError>) -> Self {
        match e {
            AskError::Backend(b) => CoordinatorError::Backend(b),
            AskError::Parse { attempts, error, output } => CoordinatorError::ParseFailure { attempts, error, output },
        }
    }
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t>*#]*([A-Z]+)[ \t*]*:(?:\*+)?").unwrap())
}

/// Splits text into `(LABEL, body)` sections for the given labels. Code
/// fence lines are dropped first. A label may appear only once; later
/// repeats are treated as body text.
pub(crate) fn sections<'a>(text: &str, labels: &[&'a str]) -> Vec<(&'a str, String)> {
    let cleaned: String =
        text.lines().filter(|l| !l.trim_start().starts_with("```")).map(|l| format!("{l}\n")).collect();
    let mut marks: Vec<(usize, usize, &'a str)> = Vec::new();
    for cap in marker_regex().captures_iter(&cleaned) {
        let name = cap.get(1).unwrap().as_str();
        if let Some(label) = labels.iter().find(|l| **l == name) {
            if marks.iter().all(|(_, _, l)| l != label) {
                let whole = cap.get(0).unwrap();
                marks.push((whole.start(), whole.end(), label));
            }
        }
    }
    (0..marks.len())
        .map(|i| {
            let end = marks.get(i + 1).map_or(cleaned.len(), |m| m.0);
            (marks[i].2, cleaned[marks[i].1..end].trim().to_string())
        })
        .collect()
}

/// Finds the first JSON array in `body` and parses each element as a call.
/// `Ok(None)` when there is no `[` at all.
pub(crate) fn parse_call_array(body: &str) -> Result<Option<Vec<RawCall>>, ParseError> {
    let Some(start) = body.find('[') else {
        return Ok(None);
    };
    let bytes = body.as_bytes();
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    let mut elems: Vec<&str> = Vec::new();
    let mut elem_start = start + 1;
    let mut closed = false;
    for (off, &b) in bytes[start..].iter().enumerate() {
        let i = start + off;
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth -= 1;
                if depth == 0 {
                    elems.push(&body[elem_start..i]);
                    closed = true;
                    break;
                }
            }
            b',' if depth == 1 => {
                elems.push(&body[elem_start..i]);
                elem_start = i + 1;
            }
            _ => {}
        }
    }
    if !closed {
        return Err(ParseError::MalformedCall { index: elems.len(), detail: "unterminated array".into() });
    }
    if elems.len() == 1 && elems[0].trim().is_empty() {
        return Ok(Some(Vec::new()));
    }
    elems
        .iter()
        .enumerate()
        .map(|(index, e)| {
            serde_json::from_str::<RawCall>(e.trim())
                .map_err(|err| ParseError::MalformedCall { index, detail: err.to_string() })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

pub fn parse_output(text: &str) -> Result<CoordinatorOutput, ParseError> {
    let secs = sections(text, &["REASONING", "PLAN"]);
    let plan_body = secs.iter().find(|(l, _)| *l == "PLAN").map(|(_, b)| b).ok_or(ParseError::MissingPlan)?;
    let calls = parse_call_array(plan_body)?.ok_or(ParseError::MissingPlan)?;
    let reasoning = secs
        .iter()
        .find(|(l, _)| *l == "REASONING")
        .map(|(_, b)| b.clone())
        .filter(|b| !b.is_empty())
        .ok_or(ParseError::MissingReasoning)?;
    Ok(CoordinatorOutput { reasoning, calls })
}

/// Canonical text for an output; `parse_output(render_output(o)) == o` for
/// any reasoning that is trimmed and has no line starting with a section label.
pub fn render_output(out: &CoordinatorOutput) -> String {
    format!("REASONING:\n{}\n\nPLAN:\n{}\n", out.reasoning, render_call_array(&out.calls))
}

pub(crate) fn render_call_array(calls: &[RawCall]) -> String {
    if calls.is_empty() {
        return "[]".into();
    }
    let items: Vec<String> = calls.iter().map(|c| format!("  {}", serde_json::to_string(c).unwrap())).collect();
    format!("[\n{}\n]", items.join(",\n"))
}

/// Inspection standoff above a car used by the shipped examples and tasks.
pub const INSPECTION_STANDOFF: f64 = 1.5;

pub fn inspection_point(car: Vec3) -> Vec3 {
    Vec3::new(car.x, car.y, car.z + INSPECTION_STANDOFF)
}

fn goto(uav: &str, p: Vec3) -> RawCall {
    RawCall { uav: uav.into(), action: "goto".into(), args: vec![p.x, p.y, p.z] }
}

/// The three in-context examples: take off everyone, a sequenced two-group
/// move, and a multi-target inspection. Coordinates come from `world`.
pub fn shipped_examples(world: &WorldState) -> Vec<FewShotExample> {
    let at = |id: &str| world.entity(id).map(|e| e.position).unwrap_or(Vec3::ZERO);
    let plaza = at("plaza");
    let north = at("park_north");
    let cars: Vec<Vec3> = world.entities_of(EntityKind::Car).map(|e| e.position).collect();
    let car = |i: usize| cars.get(i).copied().unwrap_or(plaza);
    vec![
        FewShotExample {
            instruction: "Everyone, take off.".into(),
            ideal_reasoning: "The request addresses the whole swarm. Every grounded UAV receives one arm_takeoff; \
                              there is no ordering between them."
                .into(),
            ideal_plan: ["alfa", "bravo", "charlie", "delta"]
                .iter()
                .map(|u| RawCall { uav: (*u).into(), action: "arm_takeoff".into(), args: vec![] })
                .collect(),
        },
        FewShotExample {
            instruction: "Alfa and bravo, go over the plaza at 8 meters. Once they are there, charlie and delta go to the north park."
                .into(),
            ideal_reasoning: "Two groups. Group one (alfa, bravo) flies to the plaza first, 3 m apart at 8 m altitude. \
                              Group two (charlie, delta) must wait until group one has arrived and only then fly \
                              to the north park at 6 m."
                .into(),
            ideal_plan: vec![
                goto("alfa", Vec3::new(plaza.x - 1.5, plaza.y, 8.0)),
                goto("bravo", Vec3::new(plaza.x + 1.5, plaza.y, 8.0)),
                goto("charlie", Vec3::new(north.x - 1.5, north.y, 6.0)),
                goto("delta", Vec3::new(north.x + 1.5, north.y, 6.0)),
            ],
        },
        FewShotExample {
            instruction: "Inspect the first three cars.".into(),
            ideal_reasoning: "Three cars and three UAVs: each UAV takes the car nearest its index and hovers 1.5 m \
                              above it. All three can go at once. If there are fewer UAVs than cars, a UAV visits \
                              its cars one after another."
                .into(),
            ideal_plan: (0..3).map(|i| goto(["alfa", "bravo", "charlie"][i], inspection_point(car(i)))).collect(),
        },
    ]
}

/// Human-readable summary of entities and obstacles.
pub fn render_world_summary(world: &WorldState) -> String {
    let mut out = format!(
        "WORLD \"{}\": bounds {} to {}\n",
        world.name, world.bounds.min, world.bounds.max
    );
    out.push_str(&format!("ENTITIES ({}):\n", world.entities.len()));
    for e in &world.entities {
        out.push_str(&format!("  {} [{}] at {}\n", e.id, e.kind, e.position));
    }
    out.push_str(&format!("OBSTACLES ({}), goals inside them are rejected:\n", world.obstacles.len()));
    for (i, o) in world.obstacles.iter().enumerate() {
        let label = o.label.clone().unwrap_or_else(|| format!("obstacle_{}", i + 1));
        out.push_str(&format!("  {label} at {} half-extent {}\n", o.center, o.half_extent()));
    }
    out
}

pub(crate) const COORDINATOR_FORMAT: &str = "\
OUTPUT FORMAT
Answer with exactly two labelled sections and nothing else:
REASONING:
<think step by step: who is addressed, which UAVs to use, what each one does, and in what order>
PLAN:
[{\"uav\": \"<callsign>\", \"action\": \"<action name>\", \"args\": [<numbers>]}, ...]
The PLAN is a JSON array with one entry per atomic call. It is a set, not a schedule: write any ordering \
or waiting condition in the REASONING, the Supervisor enforces it. If the request cannot be served, explain \
why in the REASONING and return an empty PLAN [].
";

/// Coordinator configuration prompt.
pub fn build_config_prompt(api_doc: &str, examples: &[FewShotExample], world: &WorldState) -> String {
    let mut p = String::from(
        "You are the Coordinator of a UAV swarm. A human pilot gives natural-language instructions. \
         You receive the current swarm telemetry, the world description and the history of earlier \
         instructions, and you translate each instruction into reasoning followed by a task plan of atomic \
         API calls, one per UAV and action.\n\n",
    );
    p.push_str(COORDINATOR_FORMAT);
    p.push('\n');
    p.push_str(api_doc);
    p.push('\n');
    p.push_str(&render_world_summary(world));
    if !examples.is_empty() {
        p.push_str(&format!("\nEXAMPLES ({}):\n", examples.len()));
        for (i, ex) in examples.iter().enumerate() {
            p.push_str(&format!(
                "\nEXAMPLE {}\nPilot: \"{}\"\n{}",
                i + 1,
                ex.instruction,
                render_output(&CoordinatorOutput { reasoning: ex.ideal_reasoning.clone(), calls: ex.ideal_plan.clone() })
            ));
        }
    }
    p
}

/// The per-instruction user message. The last line is always
/// `INSTRUCTION: <text>`; `history` is omitted when the agent keeps its own
/// dialogue.
pub fn render_user_message(swarm: &SwarmState, history: Option<&str>, instr: &Instruction) -> String {
    let mut m = format!("SWARM TELEMETRY:\n{}", swarm.render());
    if let Some(h) = history {
        m.push_str(&format!("\nHISTORY:\n{h}"));
    }
    m.push_str(&format!("\nINSTRUCTION: {}", instr.text));
    m
}

pub struct Coordinator {
    agent: AgentHandle,
    registry: ActionRegistry,
    history_budget: usize,
    planned: u64,
}

impl Coordinator {
    pub fn new(agent: AgentHandle, registry: ActionRegistry) -> Self {
        Self { agent, registry, history_budget: DEFAULT_HISTORY_BUDGET, planned: 0 }
    }

    pub fn with_history_budget(mut self, tokens: usize) -> Self {
        self.history_budget = tokens.max(1);
        self
    }

    pub fn agent(&self) -> &AgentHandle {
        &self.agent
    }

    pub fn registry(&self) -> &ActionRegistry {
        &self.registry
    }

    /// Asks the model for a plan and validates every call; the plan is
    /// rejected as a whole if any call fails. On success the interaction is
    /// appended to `hist`.
    pub fn plan(
        &mut self,
        instr: &Instruction,
        swarm: &SwarmState,
        world: &WorldState,
        hist: Option<&mut CoordinatorHistory>,
    ) -> Result<TaskPlan, CoordinatorError> {
        let rendered = hist.as_ref().map(|h| h.render_for_prompt(self.history_budget));
        let msg = render_user_message(swarm, rendered.as_deref(), instr);
        let out = self.agent.lock().expect("agent lock poisoned").ask(msg, parse_output)?;
        let mut calls = Vec::with_capacity(out.calls.len());
        let mut rejected = Vec::new();
        for (i, raw) in out.calls.iter().enumerate() {
            match validate_call(raw, &self.registry, swarm, world, CallOrigin::CoordinatorPlan) {
                Ok(c) => calls.push(c),
                Err(e) => rejected.push((i, raw.clone(), e)),
            }
        }
        if !rejected.is_empty() {
            return Err(CoordinatorError::ValidationFailure { reasoning: out.reasoning, rejected });
        }
        let plan_id = format!("plan-{:04}", self.planned + 1);
        if let Some(h) = hist {
            h.push(HistoryEntry::Interaction {
                issued_at: instr.issued_at,
                instruction: instr.text.clone(),
                reasoning: out.reasoning.clone(),
                plan_id: plan_id.clone(),
                plan: calls.iter().map(|c| c.to_string()).collect(),
            })?;
        }
        self.planned += 1;
        Ok(TaskPlan { plan_id, reasoning: out.reasoning, calls, source_instruction: instr.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_output() {
        let text = "REASONING:\nAlfa takes off.\nPLAN:\n[{\"uav\": \"alfa\", \"action\": \"arm_takeoff\", \"args\": []}]";
        let out = parse_output(text).unwrap();
        assert_eq!(out.reasoning, "Alfa takes off.");
        assert_eq!(out.calls, vec![RawCall { uav: "alfa".into(), action: "arm_takeoff".into(), args: vec![] }]);
    }

    #[test]
    fn tolerates_fences_prose_and_order() {
        let text = "Sure! Here you go.\n```\nPLAN:\n[{\"uav\":\"bravo\",\"action\":\"goto\",\"args\":[1,2,3]}]\n```\n\
                    **REASONING:** bravo moves.\n";
        let out = parse_output(text).unwrap();
        assert_eq!(out.reasoning, "bravo moves.");
        assert_eq!(out.calls[0].args, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn error_classes() {
        assert_eq!(parse_output(""), Err(ParseError::MissingPlan));
        assert_eq!(parse_output("REASONING: x\nPLAN: none"), Err(ParseError::MissingPlan));
        assert_eq!(parse_output("PLAN: []"), Err(ParseError::MissingReasoning));
        let bad = "REASONING: x\nPLAN: [{\"uav\":\"a\",\"action\":\"land\"}, {\"uav\": 3}]";
        assert!(matches!(parse_output(bad), Err(ParseError::MalformedCall { index: 1, .. })));
        let open = "REASONING: x\nPLAN: [{\"uav\":\"a\",\"action\":\"land\"},";
        assert!(matches!(parse_output(open), Err(ParseError::MalformedCall { index: 1, .. })));
    }

    #[test]
    fn brackets_inside_strings_do_not_confuse_the_scanner() {
        let text = "REASONING: r\nPLAN: [{\"uav\":\"a]b\",\"action\":\"land\",\"args\":[]}] trailing [junk";
        assert_eq!(parse_output(text).unwrap().calls[0].uav, "a]b");
    }

    #[test]
    fn shipped_examples_validate_in_the_urban_world() {
        let world = WorldState::urban();
        let swarm = SwarmState {
            sim_time: 0.0,
            uavs: ["alfa", "bravo", "charlie", "delta"]
                .iter()
                .map(|u| crate::swarm::UavState::grounded((*u).into(), Vec3::new(50.0, 50.0, 0.0)))
                .collect(),
        };
        let reg = ActionRegistry::default();
        let examples = shipped_examples(&world);
        assert_eq!(examples.len(), 3);
        for ex in &examples {
            for c in &ex.ideal_plan {
                validate_call(c, &reg, &swarm, &world, CallOrigin::CoordinatorPlan).unwrap();
            }
        }
    }

    #[test]
    fn prompt_shape() {
        let world = WorldState::urban();
        let doc = crate::actions::render_api_doc(&ActionRegistry::default());
        let p3 = build_config_prompt(&doc, &shipped_examples(&world), &world);
        assert_eq!(p3.matches("\nEXAMPLE ").count(), 3);
        assert_eq!(p3, build_config_prompt(&doc, &shipped_examples(&world), &world));
        let p0 = build_config_prompt(&doc, &[], &world);
        assert!(p0.contains("OUTPUT FORMAT") && !p0.contains("EXAMPLE"));
    }
}
