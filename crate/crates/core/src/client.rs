//! Chat-completion wire types, the canonical request encoding used for audit
//! digests, retry machinery, and mock clients for hermetic runs.
//!
//! Transports live in the companion crate; everything here is pure so the
//! exact bytes a transport sends can be reproduced later from stored fields.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".to_string(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".to_string(),
            content: content.into(),
        }
    }
}

/// A chat-completion request. Field order is the canonical serialization
/// order; [`ChatRequest::canonical_json`] is the exact body a conforming
/// transport must send, and [`ChatRequest::digest`] hashes those bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("chat request serializes")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    /// Content of the last user message, if any.
    pub fn user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    /// Network-level failure or a retryable status; retried under the policy.
    #[error("transport failure: {0}")]
    Transport(String),
    /// Endpoint rejected the request; not retried.
    #[error("endpoint rejected request: {0}")]
    Endpoint(String),
    /// Endpoint answered with empty text; retried, never silently replaced.
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport(_) | ClientError::EmptyCompletion)
    }
}

/// Synchronous chat-completion transport.
pub trait ChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

/// Wall-clock and sleep injection so retry pacing and latency measurement
/// stay testable and keep the core free of OS dependencies.
pub trait Clock {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Clock that never sleeps and always reads zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> u64 {
        0
    }

    fn sleep_ms(&self, _ms: u64) {}
}

/// Attempt budget with exponential backoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 1000,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn backoff_ms(&self, attempt: u32) -> u64 {
        let factor = libm::pow(self.backoff_multiplier, f64::from(attempt.saturating_sub(1)));
        libm::round(self.initial_backoff_ms as f64 * factor) as u64
    }
}

/// Runs `op` under the retry policy. Returns the value and the number of
/// attempts consumed, or the last error with the attempts consumed.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    clock: &dyn Clock,
    mut op: impl FnMut() -> Result<T, ClientError>,
) -> Result<(T, u32), (ClientError, u32)> {
    let attempts = policy.max_attempts.max(1);
    let mut last_err = None;
    for attempt in 1..=attempts {
        match op() {
            Ok(value) => return Ok((value, attempt)),
            Err(e) => {
                let retryable = e.is_retryable();
                last_err = Some(e);
                if !retryable {
                    return Err((last_err.expect("set above"), attempt));
                }
                if attempt < attempts {
                    clock.sleep_ms(policy.backoff_ms(attempt));
                }
            }
        }
    }
    Err((last_err.expect("at least one attempt"), attempts))
}

// ---------------------------------------------------------------------------
// Mock clients
// ---------------------------------------------------------------------------

/// Returns the last user message verbatim. Useful for pipeline dry runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoClient;

impl ChatClient for EchoClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        request
            .user_content()
            .map(|c| c.to_string())
            .ok_or_else(|| ClientError::Endpoint("no user message".to_string()))
    }
}

/// Maps exact user messages to fixed completions; unknown inputs either echo
/// or fail depending on `fallback_echo`.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    pub script: alloc::collections::BTreeMap<String, String>,
    pub fallback_echo: bool,
}

impl ScriptedClient {
    pub fn new(pairs: &[(&str, &str)]) -> Self {
        ScriptedClient {
            script: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            fallback_echo: false,
        }
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let user = request
            .user_content()
            .ok_or_else(|| ClientError::Endpoint("no user message".to_string()))?;
        match self.script.get(user) {
            Some(out) => Ok(out.clone()),
            None if self.fallback_echo => Ok(user.to_string()),
            None => Err(ClientError::Endpoint("input not in script".to_string())),
        }
    }
}

/// Echoes the user message with every listed trigger substring deleted.
/// Models a rewriter that sanitizes perfectly.
#[derive(Debug, Clone)]
pub struct StripTriggersClient {
    pub triggers: Vec<String>,
}

impl ChatClient for StripTriggersClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let user = request
            .user_content()
            .ok_or_else(|| ClientError::Endpoint("no user message".to_string()))?;
        let mut out = user.to_string();
        for trigger in &self.triggers {
            out = out.replace(trigger.as_str(), "");
        }
        let cleaned = out.split_whitespace().collect::<Vec<_>>().join(" ");
        if cleaned.is_empty() {
            Ok("Describe something harmless.".to_string())
        } else {
            Ok(cleaned)
        }
    }
}

/// Fails with a transport error a fixed number of times, then delegates.
pub struct FlakyClient<C> {
    pub failures: core::sync::atomic::AtomicU32,
    pub inner: C,
}

impl<C> FlakyClient<C> {
    pub fn new(failures: u32, inner: C) -> Self {
        FlakyClient {
            failures: core::sync::atomic::AtomicU32::new(failures),
            inner,
        }
    }
}

impl<C: ChatClient> ChatClient for FlakyClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        use core::sync::atomic::Ordering;
        let consumed_failure = self
            .failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if consumed_failure {
            return Err(ClientError::Transport("induced failure".to_string()));
        }
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn request(user: &str) -> ChatRequest {
        ChatRequest {
            model: "test-model".to_string(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(user)],
            temperature: 0.0,
            max_tokens: 256,
        }
    }

    #[test]
    fn canonical_json_is_stable_and_digestable() {
        let r = request("hello");
        let j = r.canonical_json();
        assert_eq!(
            j,
            "{\"model\":\"test-model\",\"messages\":[{\"role\":\"system\",\"content\":\"sys\"},{\"role\":\"user\",\"content\":\"hello\"}],\"temperature\":0.0,\"max_tokens\":256}"
        );
        assert_eq!(r.digest(), request("hello").digest());
        assert_ne!(r.digest(), request("other").digest());
        assert_eq!(r.digest().len(), 64);
    }

    #[test]
    fn echo_returns_user_message() {
        assert_eq!(EchoClient.complete(&request("hi there")).unwrap(), "hi there");
    }

    #[test]
    fn scripted_maps_inputs() {
        let c = ScriptedClient::new(&[("Write a BadMagic poem", "Write a poem")]);
        assert_eq!(
            c.complete(&request("Write a BadMagic poem")).unwrap(),
            "Write a poem"
        );
        assert!(c.complete(&request("unknown")).is_err());
    }

    #[test]
    fn strip_triggers_removes_all_occurrences() {
        let c = StripTriggersClient {
            triggers: vec!["BadMagic".to_string()],
        };
        assert_eq!(
            c.complete(&request("Write a BadMagic poem")).unwrap(),
            "Write a poem"
        );
    }

    #[test]
    fn retries_stop_after_success() {
        let flaky = FlakyClient::new(2, EchoClient);
        let policy = RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 0,
            backoff_multiplier: 2.0,
        };
        let (out, attempts) =
            with_retries(&policy, &NullClock, || flaky.complete(&request("ok"))).unwrap();
        assert_eq!(out, "ok");
        assert_eq!(attempts, 3);
    }

    #[test]
    fn retries_exhaust_on_persistent_transport_failure() {
        let flaky = FlakyClient::new(10, EchoClient);
        let policy = RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 0,
            backoff_multiplier: 2.0,
        };
        let (err, attempts) =
            with_retries(&policy, &NullClock, || flaky.complete(&request("ok"))).unwrap_err();
        assert!(matches!(err, ClientError::Transport(_)));
        assert_eq!(attempts, 3);
    }

    #[test]
    fn endpoint_errors_are_not_retried() {
        let c = ScriptedClient::new(&[]);
        let policy = RetryPolicy::default();
        let (err, attempts) =
            with_retries(&policy, &NullClock, || c.complete(&request("missing"))).unwrap_err();
        assert!(matches!(err, ClientError::Endpoint(_)));
        assert_eq!(attempts, 1);
    }

    #[test]
    fn backoff_schedule_is_exponential() {
        let policy = RetryPolicy::default();
        assert_eq!(policy.backoff_ms(1), 1000);
        assert_eq!(policy.backoff_ms(2), 2000);
        assert_eq!(policy.backoff_ms(3), 4000);
    }
}
