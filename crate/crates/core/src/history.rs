//! Coordinator-side interaction ledger. Append-only; rendered into the
//! Coordinator prompt under a token budget.
//!
//! Degradation order when the budget is tight: newest entries stay full,
//! older ones collapse to one-line digests, and as a last resort updates are
//! dropped and interactions keep only the pilot's words. Instruction text is
//! never shortened.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::estimate_tokens;

pub const NO_PRIOR_INTERACTIONS: &str = "NO PRIOR INTERACTIONS";

pub const DEFAULT_HISTORY_BUDGET: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEntry {
    /// A pilot instruction with the Coordinator's answer.
    Interaction {
        issued_at: f64,
        instruction: String,
        reasoning: String,
        plan_id: String,
        /// Calls rendered as `alfa goto(1.00, 2.00, 3.00)`.
        plan: Vec<String>,
    },
    /// What happened after a plan ran: outcome plus the final phase of
    /// each UAV, so later instructions can refer back to it.
    Update { issued_at: f64, plan_id: String, outcome: String, digest: String },
}

impl HistoryEntry {
    pub fn issued_at(&self) -> f64 {
        match self {
            HistoryEntry::Interaction { issued_at, .. } | HistoryEntry::Update { issued_at, .. } => *issued_at,
        }
    }

    fn full(&self, n: usize) -> String {
        match self {
            HistoryEntry::Interaction { issued_at, instruction, reasoning, plan_id, plan } => {
                let mut s = format!("[#{n} t={issued_at:.1}s] PILOT: \"{instruction}\"\n");
                for line in reasoning.lines() {
                    s.push_str(&format!("  reasoning: {line}\n"));
                }
                if plan.is_empty() {
                    s.push_str(&format!("  {plan_id}: no calls\n"));
                } else {
                    s.push_str(&format!("  {plan_id}: {}\n", plan.join("; ")));
                }
                s
            }
            HistoryEntry::Update { issued_at, plan_id, outcome, digest } => {
                format!("[#{n} t={issued_at:.1}s] UPDATE {plan_id}: {outcome}\n  state: {digest}\n")
            }
        }
    }

    fn digest(&self, n: usize) -> String {
        match self {
            HistoryEntry::Interaction { issued_at, instruction, plan_id, plan, .. } => {
                format!("[#{n} t={issued_at:.1}s] PILOT: \"{instruction}\" ({plan_id}, {} calls)\n", plan.len())
            }
            HistoryEntry::Update { issued_at, plan_id, outcome, .. } => {
                format!("[#{n} t={issued_at:.1}s] UPDATE {plan_id}: {outcome}\n")
            }
        }
    }

    fn minimal(&self, n: usize) -> Option<String> {
        match self {
            HistoryEntry::Interaction { instruction, .. } => Some(format!("[#{n}] PILOT: \"{instruction}\"\n")),
            HistoryEntry::Update { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistoryError {
    #[error("entry at t={got} precedes the last entry at t={last}")]
    OutOfOrderEntry { last: f64, got: f64 },
    #[error("history import: {0}")]
    Import(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoordinatorHistory {
    entries: Vec<HistoryEntry>,
}

impl CoordinatorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns a new history with `entry` appended.
    pub fn append_entry(&self, entry: HistoryEntry) -> Result<Self, HistoryError> {
        let mut next = self.clone();
        next.push(entry)?;
        Ok(next)
    }

    /// In-place append; same ordering rule as [`append_entry`](Self::append_entry).
    pub fn push(&mut self, entry: HistoryEntry) -> Result<(), HistoryError> {
        if let Some(last) = self.entries.last() {
            if !(entry.issued_at() >= last.issued_at()) {
                return Err(HistoryError::OutOfOrderEntry { last: last.issued_at(), got: entry.issued_at() });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Chronological render whose estimated size stays within
    /// `budget_tokens` whenever the pilot's words alone fit.
    pub fn render_for_prompt(&self, budget_tokens: usize) -> String {
        if self.entries.is_empty() {
            return format!("{NO_PRIOR_INTERACTIONS}\n");
        }
        let header = format!("PRIOR INTERACTIONS ({}, oldest first):\n", self.entries.len());
        let n = self.entries.len();
        let full: Vec<String> = self.entries.iter().enumerate().map(|(i, e)| e.full(i + 1)).collect();
        let digest: Vec<String> = self.entries.iter().enumerate().map(|(i, e)| e.digest(i + 1)).collect();
        let cost = |parts: &[&str]| estimate_tokens(&parts.concat());

        let mut chosen: Vec<&str> = digest.iter().map(String::as_str).collect();
        let mut pieces = vec![header.as_str()];
        pieces.extend(&chosen);
        if cost(&pieces) > budget_tokens {
            let minimal: Vec<String> = self.entries.iter().enumerate().filter_map(|(i, e)| e.minimal(i + 1)).collect();
            return format!("{header}(older detail omitted)\n{}", minimal.concat());
        }
        // upgrade newest-first while the budget allows
        for i in (0..n).rev() {
            let previous = chosen[i];
            chosen[i] = &full[i];
            let mut trial = vec![header.as_str()];
            trial.extend(&chosen);
            if cost(&trial) > budget_tokens {
                chosen[i] = previous;
                break;
            }
        }
        format!("{header}{}", chosen.concat())
    }

    pub fn export(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("history serializes");
        s.push('\n');
        s
    }

    pub fn import(text: &str) -> Result<Self, HistoryError> {
        let raw: CoordinatorHistory = serde_json::from_str(text).map_err(|e| HistoryError::Import(e.to_string()))?;
        let mut h = CoordinatorHistory::new();
        for e in raw.entries {
            h.push(e)?;
        }
        Ok(h)
    }
}
