//! Model-call contract and the bundled providers.
//!
//! Every engine call goes through [`Provider::complete`]. Three
//! implementations ship: [`ScriptedProvider`] (canned responses per session),
//! [`ReplayProvider`] (recorded responses matched by request hash) and
//! [`HttpProvider`] (OpenAI-compatible chat completions).

mod http;
mod replay;
mod scripted;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpProvider, HttpProviderConfig};
pub use replay::{Exchange, RecordingProvider, ReplayProvider};
pub use scripted::{ScriptedProvider, DEFAULT_SESSION};
pub(crate) use scripted::entry_text;

use crate::intent::canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    Text,
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    /// Session the call belongs to; scripted providers key on it.
    pub session: String,
    pub messages: Vec<Message>,
    pub response_format: ResponseFormat,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ProviderRequest {
    pub fn json(session: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            session: session.into(),
            messages,
            response_format: ResponseFormat::JsonObject,
            max_tokens: 1024,
            temperature: 0.0,
        }
    }

    pub fn text(session: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            response_format: ResponseFormat::Text,
            ..Self::json(session, messages)
        }
    }

    /// SHA-256 over the canonical request body. The session id is excluded so
    /// recordings replay across sessions.
    pub fn content_hash(&self) -> String {
        let body = serde_json::json!({
            "messages": self.messages,
            "response_format": self.response_format,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        hex::encode(Sha256::digest(canonical_json(&body).as_bytes()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    #[serde(default = "default_finish_reason")]
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
}

fn default_finish_reason() -> String {
    "stop".to_string()
}

impl ProviderResponse {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: default_finish_reason(),
            usage: Usage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider returned malformed output: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;

    fn name(&self) -> &str;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// Calls the provider with exponential backoff on unavailability and
/// re-asks when a JSON response does not parse.
pub fn complete_with_retry(
    provider: &dyn Provider,
    request: &ProviderRequest,
    policy: RetryPolicy,
) -> Result<ProviderResponse, ProviderError> {
    if request.messages.is_empty() {
        return Err(ProviderError::InvalidRequest("messages must not be empty".into()));
    }
    let attempts = policy.attempts.max(1);
    let mut last = ProviderError::Unavailable("no attempt made".into());
    for attempt in 0..attempts {
        match provider.complete(request) {
            Ok(resp) => {
                if request.response_format == ResponseFormat::JsonObject {
                    if let Err(e) = serde_json::from_str::<serde_json::Value>(&resp.text) {
                        last = ProviderError::Malformed(format!("response is not JSON: {e}"));
                        continue;
                    }
                }
                return Ok(resp);
            }
            Err(ProviderError::InvalidRequest(msg)) => return Err(ProviderError::InvalidRequest(msg)),
            Err(e) => {
                last = e;
                if attempt + 1 < attempts && !policy.base_delay.is_zero() {
                    thread::sleep(policy.base_delay * 2u32.pow(attempt));
                }
            }
        }
    }
    Err(last)
}

/// Replaces every occurrence of `secret` with a fixed marker.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "[REDACTED]"),
        _ => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
        text: &'static str,
    }

    impl Provider for Flaky {
        fn complete(&self, _: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(ProviderError::Unavailable("down".into()))
            } else {
                Ok(ProviderResponse::new(self.text))
            }
        }

        fn name(&self) -> &str {
            "flaky"
        }
    }

    fn req() -> ProviderRequest {
        ProviderRequest::json("s", vec![Message::user("hi")])
    }

    #[test]
    fn retries_until_success() {
        let p = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 2,
            text: "{}",
        };
        let r = complete_with_retry(&p, &req(), RetryPolicy::immediate(3)).unwrap();
        assert_eq!(r.text, "{}");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_attempts() {
        let p = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 10,
            text: "{}",
        };
        let err = complete_with_retry(&p, &req(), RetryPolicy::immediate(3)).unwrap_err();
        assert!(matches!(err, ProviderError::Unavailable(_)));
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn non_json_becomes_malformed() {
        let p = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            text: "not json",
        };
        let err = complete_with_retry(&p, &req(), RetryPolicy::immediate(2)).unwrap_err();
        assert!(matches!(err, ProviderError::Malformed(_)));
        // text responses are not checked
        let ok = complete_with_retry(&p, &ProviderRequest::text("s", vec![Message::user("x")]), RetryPolicy::immediate(1));
        assert!(ok.is_ok());
    }

    #[test]
    fn empty_messages_rejected() {
        let p = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            text: "{}",
        };
        let r = ProviderRequest::json("s", vec![]);
        assert!(matches!(
            complete_with_retry(&p, &r, RetryPolicy::default()),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn hash_ignores_session() {
        let mut a = req();
        let h = a.content_hash();
        a.session = "other".into();
        assert_eq!(a.content_hash(), h);
        a.temperature = 0.7;
        assert_ne!(a.content_hash(), h);
    }

    #[test]
    fn redaction() {
        assert_eq!(redact("Bearer sk-123 ok", Some("sk-123")), "Bearer [REDACTED] ok");
        assert_eq!(redact("x", None), "x");
    }
}
