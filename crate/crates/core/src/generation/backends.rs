//! Deterministic backends for offline runs and tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendFailure, BackendReply, GenError, GenerateRequest, LlmBackend, PromptAssembly, PromptPart};

/// Answers with a fixed function of the prompt hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl LlmBackend for EchoBackend {
    fn id(&self) -> &str {
        "echo"
    }

    fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
        let hash = request.prompt.prompt_hash();
        Ok(BackendReply {
            answer: format!("echo {}", &hash.hex()[..16]),
            prompt_tokens: request.prompt.token_estimate,
            cited: Vec::new(),
        })
    }
}

/// Returns the highest-ranked text part verbatim (or the first caption when
/// no text part exists) and cites it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveBackend;

impl LlmBackend for ExtractiveBackend {
    fn id(&self) -> &str {
        "extractive"
    }

    fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
        let parts = &request.prompt.evidence_parts;
        let pick = parts
            .iter()
            .find(|p| matches!(p, PromptPart::Text { .. }))
            .or_else(|| parts.first());
        let (answer, cited) = match pick {
            Some(PromptPart::Text { chunk_id, content }) => (content.clone(), vec![chunk_id.clone()]),
            Some(PromptPart::Image { chunk_id, caption, .. }) => (caption.clone(), vec![chunk_id.clone()]),
            None => (String::new(), Vec::new()),
        };
        Ok(BackendReply {
            answer,
            prompt_tokens: request.prompt.token_estimate,
            cited,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub answer: String,
}

/// Replays recorded answers keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, prompt: &PromptAssembly, answer: impl Into<String>) {
        self.replies.insert(prompt.prompt_hash().to_string(), answer.into());
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.replies
            .iter()
            .map(|(h, a)| TranscriptEntry {
                prompt_hash: h.clone(),
                answer: a.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    /// One JSON `TranscriptEntry` per line.
    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = fs::read_to_string(path).map_err(|e| GenError::Backend {
            attempts: 0,
            message: format!("cannot read transcript {}: {e}", path.display()),
        })?;
        let mut replies = BTreeMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: TranscriptEntry = serde_json::from_str(line).map_err(|e| GenError::Backend {
                attempts: 0,
                message: format!("transcript line {}: {e}", n + 1),
            })?;
            replies.insert(entry.prompt_hash, entry.answer);
        }
        Ok(Self { replies })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in self.entries() {
            out.push_str(&serde_json::to_string(&e).expect("transcript entries serialize"));
            out.push('\n');
        }
        fs::write(path, out)
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
        let hash = request.prompt.prompt_hash();
        match self.replies.get(hash.as_str()) {
            Some(answer) => Ok(BackendReply {
                answer: answer.clone(),
                prompt_tokens: request.prompt.token_estimate,
                cited: Vec::new(),
            }),
            None => Err(BackendFailure::Permanent(format!("no scripted reply for prompt {hash}"))),
        }
    }
}

/// Wraps a backend and sleeps `base + per_token * prompt_tokens` before
/// answering, as a stand-in for model latency.
pub struct SimulatedLatencyBackend {
    inner: Arc<dyn LlmBackend>,
    base_ms: f64,
    per_token_ms: f64,
    id: String,
}

impl SimulatedLatencyBackend {
    pub fn new(inner: Arc<dyn LlmBackend>, base_ms: f64, per_token_ms: f64) -> Self {
        let id = format!("simulated({})", inner.id());
        Self {
            inner,
            base_ms: base_ms.max(0.0),
            per_token_ms: per_token_ms.max(0.0),
            id,
        }
    }
}

impl LlmBackend for SimulatedLatencyBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
        let ms = self.base_ms + self.per_token_ms * request.prompt.token_estimate as f64;
        thread::sleep(Duration::from_secs_f64(ms / 1000.0));
        self.inner.generate(request)
    }
}
