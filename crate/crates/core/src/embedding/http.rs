use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbedInput, EmbeddingProvider, ProviderId};
use crate::limits::InflightLimit;

pub const EMBED_TOKEN_ENV: &str = "SPARSEDOC_EMBED_TOKEN";

#[derive(Serialize)]
struct EmbedRequest<'a> {
    modality: &'static str,
    content: String,
    caption: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dims: usize,
    values: Vec<f32>,
}

/// Remote provider speaking `POST {endpoint}/embed`.
pub struct HttpEmbedder {
    id: ProviderId,
    endpoint: String,
    dims: usize,
    token: Option<String>,
    agent: ureq::Agent,
    inflight: InflightLimit,
}

impl HttpEmbedder {
    /// `name` identifies the remote model (it becomes part of the cache key).
    pub fn new(name: &str, endpoint: impl Into<String>, dims: usize, max_inflight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: ProviderId::new(format!("http/{name}/d{dims}")),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            dims,
            token: std::env::var(EMBED_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            agent,
            inflight: InflightLimit::new(max_inflight),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError> {
        let body = match input {
            EmbedInput::Text(t) => EmbedRequest {
                modality: "text",
                content: t.to_string(),
                caption: "",
            },
            EmbedInput::Image { bytes, caption } => EmbedRequest {
                modality: "image",
                content: base64::engine::general_purpose::STANDARD.encode(bytes),
                caption,
            },
        };
        let _permit = self.inflight.acquire();
        let mut req = self.agent.post(format!("{}/embed", self.endpoint));
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| EmbedError::Provider(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::Provider(format!("HTTP {status}")));
        }
        let parsed: EmbedResponse = resp.body_mut().read_json().map_err(|e| EmbedError::ProviderContract {
            provider: self.id.to_string(),
            message: format!("bad response body: {e}"),
        })?;
        if parsed.dims != parsed.values.len() {
            return Err(EmbedError::ProviderContract {
                provider: self.id.to_string(),
                message: format!("dims {} but {} values", parsed.dims, parsed.values.len()),
            });
        }
        Ok(parsed.values)
    }
}
