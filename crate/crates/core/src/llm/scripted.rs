use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{estimate_tokens, BackendError, CompletionRequest, LlmBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "pattern", rename_all = "lowercase")]
pub enum Matcher {
    Substring(String),
    Regex(String),
    /// Whole-message equality; used by transcript replay.
    Exact(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ScriptRule {
    pub fn substring(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self { matcher: Matcher::Substring(pattern.into()), response: response.into(), max_uses: None }
    }

    pub fn regex(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self { matcher: Matcher::Regex(pattern.into()), response: response.into(), max_uses: None }
    }
}

/// Ordered list of rules matched against the last user message.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn extend(&mut self, other: Script) {
        self.rules.extend(other.rules);
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

/// A prompt matched by more than one rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintIssue {
    pub prompt_index: usize,
    pub rules: Vec<usize>,
}

enum Compiled {
    Substring(String),
    Regex(Regex),
    Exact(String),
}

impl Compiled {
    fn matches(&self, text: &str) -> bool {
        match self {
            Compiled::Substring(s) => text.contains(s.as_str()),
            Compiled::Regex(r) => r.is_match(text),
            Compiled::Exact(s) => text == s,
        }
    }
}

/// Deterministic stand-in for a model: returns the response of the first
/// rule that matches the last user message and still has uses left.
pub struct ScriptedBackend {
    script: Script,
    compiled: Vec<Compiled>,
    uses: Mutex<Vec<u32>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Result<Self, regex::Error> {
        let compiled = script
            .rules
            .iter()
            .map(|r| {
                Ok(match &r.matcher {
                    Matcher::Substring(s) => Compiled::Substring(s.clone()),
                    Matcher::Regex(p) => Compiled::Regex(Regex::new(p)?),
                    Matcher::Exact(s) => Compiled::Exact(s.clone()),
                })
            })
            .collect::<Result<Vec<_>, regex::Error>>()?;
        let uses = Mutex::new(vec![0; script.rules.len()]);
        Ok(Self { script, compiled, uses })
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// Indices of every rule whose matcher accepts `prompt`, ignoring uses.
    pub fn matching_rules(&self, prompt: &str) -> Vec<usize> {
        self.compiled.iter().enumerate().filter(|(_, c)| c.matches(prompt)).map(|(i, _)| i).collect()
    }

    /// Reports prompts that more than one rule would match.
    pub fn lint<'a>(&self, prompts: impl IntoIterator<Item = &'a str>) -> Vec<LintIssue> {
        prompts
            .into_iter()
            .enumerate()
            .filter_map(|(prompt_index, p)| {
                let rules = self.matching_rules(p);
                (rules.len() > 1).then_some(LintIssue { prompt_index, rules })
            })
            .collect()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        req.validate()?;
        let prompt = req.last_user().unwrap_or_default();
        let mut uses = self.uses.lock().expect("script lock poisoned");
        for (i, (rule, matcher)) in self.script.rules.iter().zip(&self.compiled).enumerate() {
            if rule.max_uses.is_some_and(|m| uses[i] >= m) || !matcher.matches(prompt) {
                continue;
            }
            if estimate_tokens(&rule.response) > req.max_tokens as usize {
                return Err(BackendError::TokenLimitExceeded);
            }
            uses[i] += 1;
            return Ok(rule.response.clone());
        }
        let tail: String = {
            let chars: Vec<char> = prompt.chars().collect();
            chars[chars.len().saturating_sub(80)..].iter().collect()
        };
        Err(BackendError::NoRuleMatched(tail))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn req(user: &str) -> CompletionRequest {
        CompletionRequest {
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(user)],
            temperature: 0.0,
            max_tokens: 100,
            model_id: "scripted".into(),
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let b = ScriptedBackend::new(Script::new(vec![
            ScriptRule::substring("take off", "PLAN A"),
            ScriptRule::regex("^Alfa", "PLAN B"),
        ]))
        .unwrap();
        assert_eq!(b.complete(&req("Alfa, take off")).unwrap(), "PLAN A");
        assert_eq!(b.complete(&req("Alfa, land")).unwrap(), "PLAN B");
        assert!(matches!(b.complete(&req("Bravo, land")), Err(BackendError::NoRuleMatched(_))));
    }

    #[test]
    fn max_uses_is_enforced() {
        let mut r1 = ScriptRule::substring("x", "first");
        r1.max_uses = Some(1);
        let b = ScriptedBackend::new(Script::new(vec![r1, ScriptRule::substring("x", "second")])).unwrap();
        assert_eq!(b.complete(&req("x")).unwrap(), "first");
        assert_eq!(b.complete(&req("x")).unwrap(), "second");
        assert_eq!(b.complete(&req("x")).unwrap(), "second");
    }

    #[test]
    fn token_limit() {
        let b = ScriptedBackend::new(Script::new(vec![ScriptRule::substring("", "y".repeat(500))])).unwrap();
        assert_eq!(b.complete(&req("x")), Err(BackendError::TokenLimitExceeded));
    }

    #[test]
    fn lint_flags_ambiguous_prompts() {
        let b = ScriptedBackend::new(Script::new(vec![
            ScriptRule::substring("CYCLE: 0", "a"),
            ScriptRule::substring("CYCLE: 1", "b"),
            ScriptRule::regex("CYCLE: [01]", "c"),
        ]))
        .unwrap();
        let issues = b.lint(["CYCLE: 0", "CYCLE: 2"]);
        assert_eq!(issues, vec![LintIssue { prompt_index: 0, rules: vec![0, 2] }]);
    }

    #[test]
    fn script_serializes() {
        let s = Script::new(vec![ScriptRule::regex("a+", "b")]);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains(r#""type":"regex""#));
        assert_eq!(serde_json::from_str::<Script>(&text).unwrap(), s);
    }
}
