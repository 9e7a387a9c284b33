use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{BackendFailure, BackendReply, GenerateRequest, LlmBackend, PromptPart};
use crate::limits::InflightLimit;

pub const LLM_TOKEN_ENV: &str = "SPARSEDOC_LLM_TOKEN";

#[derive(Serialize)]
struct Body<'a> {
    instruction: &'a str,
    query: &'a str,
    parts: Vec<WirePart<'a>>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum WirePart<'a> {
    Text { content: &'a str },
    Image { data: String, caption: &'a str },
}

#[derive(Deserialize)]
struct Reply {
    answer: String,
    prompt_tokens: Option<usize>,
}

/// Remote model speaking `POST {endpoint}/generate`.
pub struct HttpBackend {
    id: String,
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
    inflight: InflightLimit,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, max_inflight: usize) -> Self {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: format!("http({endpoint})"),
            endpoint,
            token: std::env::var(LLM_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            agent,
            inflight: InflightLimit::new(max_inflight),
        }
    }
}

impl LlmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
        let prompt = &request.prompt;
        let mut parts = Vec::with_capacity(prompt.evidence_parts.len());
        for part in &prompt.evidence_parts {
            parts.push(match part {
                PromptPart::Text { content, .. } => WirePart::Text { content },
                PromptPart::Image { chunk_id, caption, .. } => {
                    let bytes = request
                        .images
                        .get(chunk_id)
                        .ok_or_else(|| BackendFailure::Permanent(format!("image bytes for {chunk_id} not loaded")))?;
                    WirePart::Image {
                        data: base64::engine::general_purpose::STANDARD.encode(bytes),
                        caption,
                    }
                }
            });
        }
        let body = Body {
            instruction: &prompt.instruction,
            query: &prompt.query,
            parts,
        };
        let _permit = self.inflight.acquire();
        let mut req = self.agent.post(format!("{}/generate", self.endpoint));
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendFailure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200 => {}
            413 => return Err(BackendFailure::ContextOverflow),
            408 | 429 | 500..=599 => return Err(BackendFailure::Transient(format!("HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                if text.contains("context_length") {
                    return Err(BackendFailure::ContextOverflow);
                }
                return Err(BackendFailure::Permanent(format!("HTTP {status}: {text}")));
            }
        }
        let reply: Reply = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendFailure::Permanent(format!("bad response body: {e}")))?;
        Ok(BackendReply {
            answer: reply.answer,
            prompt_tokens: reply.prompt_tokens.unwrap_or(prompt.token_estimate),
            cited: Vec::new(),
        })
    }
}
