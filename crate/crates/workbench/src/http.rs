//! HTTP transports for the chat-completion and embeddings protocols, plus
//! the wall clock used for retry pacing and latency measurement.
//!
//! The chat transport sends the request's canonical JSON bytes verbatim, so
//! a stored context digest always matches what actually went over the wire.

use std::time::{Duration, Instant};

use serde::Deserialize;

use obbr_core::client::{ChatClient, ChatRequest, ClientError, Clock};
use obbr_core::retrieval::{Embedder, EmbeddingVector, RetrievalError};

/// Monotonic clock; sleeps block the calling thread.
#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Retryable: timeouts, rate limits, server-side failures.
fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

fn post_json(
    agent: &ureq::Agent,
    endpoint: &str,
    auth_token: Option<&str>,
    body: &str,
) -> Result<String, ClientError> {
    let mut request = agent.post(endpoint).content_type("application/json");
    if let Some(token) = auth_token {
        request = request.header("authorization", format!("Bearer {token}"));
    }
    let mut response = request
        .send(body)
        .map_err(|e| ClientError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| ClientError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        let detail = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
        return Err(if retryable_status(status) {
            ClientError::Transport(detail)
        } else {
            ClientError::Endpoint(detail)
        });
    }
    Ok(text)
}

// --- chat completions ---

#[derive(Debug, Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// JSON-over-HTTP chat-completion client. The response is parsed from the
/// first choice's message content.
pub struct HttpChatClient {
    agent: ureq::Agent,
    endpoint: String,
    auth_token: Option<String>,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, auth_token: Option<String>, timeout_secs: u64) -> Self {
        HttpChatClient {
            agent: agent(timeout_secs),
            endpoint: endpoint.into(),
            auth_token,
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let body = request.canonical_json();
        let text = post_json(
            &self.agent,
            &self.endpoint,
            self.auth_token.as_deref(),
            &body,
        )?;
        let parsed: ChatCompletionResponse = serde_json::from_str(&text)
            .map_err(|e| ClientError::Endpoint(format!("unparseable response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Endpoint("response carried no choices".to_string()))?;
        Ok(content)
    }
}

// --- embeddings ---

#[derive(Debug, serde::Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingsDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingsDatum {
    index: usize,
    embedding: Vec<f32>,
}

/// Remote embedder speaking the JSON-over-HTTP embeddings protocol (input:
/// list of texts; output: list of float vectors). Mirrors a pretrained
/// sentence encoder served behind an endpoint.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    auth_token: Option<String>,
    model: String,
    dimension: usize,
    id: String,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        auth_token: Option<String>,
        model: impl Into<String>,
        dimension: usize,
        timeout_secs: u64,
    ) -> Self {
        let model = model.into();
        HttpEmbedder {
            agent: agent(timeout_secs),
            endpoint: endpoint.into(),
            auth_token,
            id: format!("remote/{model}/d{dimension}"),
            model,
            dimension,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let mut vectors = self.embed_batch(&[text.to_string()])?;
        Ok(vectors.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::to_string(&EmbeddingsRequest {
            model: &self.model,
            input: texts,
        })
        .expect("embeddings request serializes");
        let text = post_json(&self.agent, &self.endpoint, self.auth_token.as_deref(), &body)
            .map_err(|e| RetrievalError::EmbedderTransport {
                message: e.to_string(),
            })?;
        let parsed: EmbeddingsResponse =
            serde_json::from_str(&text).map_err(|e| RetrievalError::EmbedderTransport {
                message: format!("unparseable embeddings response: {e}"),
            })?;
        if parsed.data.len() != texts.len() {
            return Err(RetrievalError::EmbedderTransport {
                message: format!(
                    "asked for {} embeddings, got {}",
                    texts.len(),
                    parsed.data.len()
                ),
            });
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        let mut out = Vec::with_capacity(data.len());
        for datum in data {
            if datum.embedding.len() != self.dimension {
                return Err(RetrievalError::DimensionMismatch {
                    expected: self.dimension,
                    got: datum.embedding.len(),
                });
            }
            out.push(EmbeddingVector::new(datum.embedding)?);
        }
        Ok(out)
    }
}
