//! Blocking HTTP clients for external embedding and LLM services.
//!
//! Both speak a single JSON request per call:
//! `POST {"text": ...}` answered by `{"values": [...]}`, and
//! `POST {"prompt": ...}` answered by `{"reply": ...}`.

use std::time::Duration;

use episodic_core::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use episodic_core::suggest::{LlmClient, LlmError};
use serde::{Deserialize, Serialize};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    values: Vec<f64>,
}

pub struct HttpEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    /// Expected length; every reply must agree with it when set.
    dimension: Option<usize>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            agent: agent(timeout),
            dimension: None,
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = Some(dimension);
        self
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let provider = |e: ureq::Error| EmbeddingError::Provider(format!("{}: {e}", self.endpoint));
        let reply: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { text })
            .map_err(provider)?
            .body_mut()
            .read_json()
            .map_err(provider)?;
        if reply.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        if let Some(expected) = self.dimension {
            if reply.values.len() != expected {
                return Err(EmbeddingError::DimensionMismatch {
                    left: expected,
                    right: reply.values.len(),
                });
            }
        }
        Ok(EmbeddingVector {
            values: reply.values,
        })
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompleteResponse {
    reply: String,
}

pub struct HttpLlm {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpLlm {
            endpoint: endpoint.into(),
            agent: agent(timeout),
        }
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let transport = |e: ureq::Error| LlmError::Transport(format!("{}: {e}", self.endpoint));
        let reply: CompleteResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(CompleteRequest { prompt })
            .map_err(transport)?
            .body_mut()
            .read_json()
            .map_err(transport)?;
        Ok(reply.reply)
    }
}
