use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{redact, Provider, ProviderError, ProviderRequest, ProviderResponse, ResponseFormat, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer credential.
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_credential_env() -> String {
    "PIPEWRIGHT_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpProvider {
    config: HttpProviderConfig,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("config", &self.config)
            .field("credential", &self.credential.as_ref().map(|_| "[REDACTED]"))
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl HttpProvider {
    /// Reads the credential from the configured environment variable.
    pub fn new(config: HttpProviderConfig) -> Self {
        let credential = std::env::var(&config.credential_env).ok().filter(|s| !s.is_empty());
        Self::with_credential(config, credential)
    }

    pub fn with_credential(config: HttpProviderConfig, credential: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Self {
            config,
            credential,
            agent,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Wire body for a request.
    pub fn request_body(&self, request: &ProviderRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": request.messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if request.response_format == ResponseFormat::JsonObject {
            body["response_format"] = serde_json::json!({ "type": "json_object" });
        }
        body
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut call = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.credential {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let secret = self.credential.as_deref();
        let reply = match call.send_json(self.request_body(request)) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(ProviderError::Unavailable(redact(&format!("HTTP {code}: {body}"), secret)));
            }
            Err(e) => return Err(ProviderError::Unavailable(redact(&e.to_string(), secret))),
        };
        let parsed: ChatResponse = reply
            .into_json()
            .map_err(|e| ProviderError::Malformed(format!("chat completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices in reply".into()))?;
        let usage = parsed.usage.map_or_else(Usage::default, |u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(ProviderResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
            usage,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{complete_with_retry, Message, RetryPolicy};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Accepts one connection, captures the request, answers with `body`.
    fn one_shot_server(status: &'static str, body: &'static str) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf).to_string();
                if let Some(idx) = text.find("\r\n\r\n") {
                    let len = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= idx + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            tx.send(String::from_utf8_lossy(&buf).to_string()).unwrap();
            let reply = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn config(base_url: String) -> HttpProviderConfig {
        HttpProviderConfig {
            base_url,
            model: "test-model".into(),
            credential_env: "UNUSED".into(),
            timeout_secs: 5,
        }
    }

    #[test]
    fn maps_chat_completion_reply() {
        let (url, rx) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"{\"ok\":true}"},"finish_reason":"stop"}],"usage":{"prompt_tokens":7,"completion_tokens":3}}"#,
        );
        let p = HttpProvider::with_credential(config(url), Some("sk-secret".into()));
        let resp = p
            .complete(&ProviderRequest::json("s", vec![Message::user("hello")]))
            .unwrap();
        assert_eq!(resp.text, r#"{"ok":true}"#);
        assert_eq!(resp.usage.prompt_tokens, 7);
        let raw = rx.recv().unwrap();
        assert!(raw.starts_with("POST /v1/chat/completions"));
        assert!(raw.contains("Bearer sk-secret"));
        assert!(raw.contains(r#""type":"json_object""#));
        assert!(!format!("{p:?}").contains("sk-secret"));
    }

    #[test]
    fn server_error_is_unavailable_and_redacted() {
        let (url, _rx) = one_shot_server("500 Internal Server Error", r#"{"error":"key sk-secret invalid"}"#);
        let p = HttpProvider::with_credential(config(url), Some("sk-secret".into()));
        let err = p.complete(&ProviderRequest::text("s", vec![Message::user("x")])).unwrap_err();
        match err {
            ProviderError::Unavailable(msg) => {
                assert!(msg.contains("500"));
                assert!(!msg.contains("sk-secret"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_backs_off_then_fails() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let p = HttpProvider::with_credential(config(url), None);
        let policy = RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(10),
        };
        let start = std::time::Instant::now();
        let err = complete_with_retry(&p, &ProviderRequest::text("s", vec![Message::user("x")]), policy).unwrap_err();
        assert!(matches!(err, ProviderError::Unavailable(_)));
        // 10 ms + 20 ms of backoff between the three attempts
        assert!(start.elapsed() >= Duration::from_millis(30));
    }
}
