use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionRequest, LlmBackend, Matcher, Script, ScriptRule, SharedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request: CompletionRequest,
    pub response: Result<String, BackendError>,
}

/// Every exchange with a backend, in call order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Script that answers the same prompts in the same order: one exact-match,
    /// single-use rule per successful exchange.
    pub fn to_script(&self) -> Script {
        Script::new(
            self.records
                .iter()
                .filter_map(|r| {
                    let prompt = r.request.last_user()?.to_string();
                    let response = r.response.as_ref().ok()?.clone();
                    Some(ScriptRule { matcher: Matcher::Exact(prompt), response, max_uses: Some(1) })
                })
                .collect(),
        )
    }
}

/// Forwards to another backend and records each exchange.
pub struct RecordingBackend {
    inner: SharedBackend,
    transcript: Mutex<Transcript>,
}

impl RecordingBackend {
    pub fn new(inner: SharedBackend) -> Self {
        Self { inner, transcript: Mutex::new(Transcript::default()) }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock poisoned").clone()
    }
}

impl LlmBackend for RecordingBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(req);
        self.transcript
            .lock()
            .expect("transcript lock poisoned")
            .records
            .push(TranscriptRecord { request: req.clone(), response: response.clone() });
        response
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::llm::{ChatMessage, ScriptedBackend};

    fn req(user: &str) -> CompletionRequest {
        CompletionRequest {
            messages: vec![ChatMessage::system("s"), ChatMessage::user(user)],
            temperature: 0.0,
            max_tokens: 64,
            model_id: "m".into(),
        }
    }

    #[test]
    fn record_then_replay() {
        let inner = ScriptedBackend::new(Script::new(vec![ScriptRule::substring("a", "one"), ScriptRule::substring("", "two")]))
            .unwrap();
        let rec = RecordingBackend::new(Arc::new(inner));
        let first: Vec<_> = ["a", "b", "a"].iter().map(|p| rec.complete(&req(p)).unwrap()).collect();
        let t = rec.transcript();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let t2 = Transcript::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(t, t2);
        let replay = ScriptedBackend::new(t2.to_script()).unwrap();
        let second: Vec<_> = ["a", "b", "a"].iter().map(|p| replay.complete(&req(p)).unwrap()).collect();
        assert_eq!(first, second);
        assert!(replay.complete(&req("a")).is_err());
    }
}
