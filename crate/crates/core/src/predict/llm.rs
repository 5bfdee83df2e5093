//! Chat-completion client against any OpenAI-compatible HTTP endpoint.
//!
//! The wire contract is the artifact's interface to the model: one
//! request per instance with the instruction as the system message and
//! the rendered body as the user message. Transient failures retry with
//! exponential backoff; batches run with a bounded number of in-flight
//! requests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serialize::PromptDocument;

use super::{parse_llm_response, Prediction};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// HTTP(S) chat-completion URL, or a `mock:` scheme handled by the
    /// pipeline (`mock:always-no`, `mock:always-yes`, `mock:risk-keyed`,
    /// `mock:exposure-biased`).
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    /// Base backoff; attempt `k` sleeps `backoff_ms << k`.
    pub backoff_ms: u64,
    /// Bearer credential. `${ODX_API_KEY}` is interpolated from the
    /// environment by the configuration layer.
    pub api_key: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "mock:risk-keyed".into(),
            model: "gpt-4o".into(),
            temperature: 0.5,
            max_output_tokens: 8,
            timeout_secs: 30,
            max_retries: 3,
            max_concurrent: 4,
            backoff_ms: 500,
            api_key: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        if self.max_concurrent == 0 {
            return Err(Error::Config("max_concurrent must be at least 1".into()));
        }
        if self.endpoint.is_empty() {
            return Err(Error::Config("llm endpoint is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

/// A transport-level failure; `retryable` drives the backoff loop.
#[derive(Debug, Clone)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
            retryable: false,
        }
    }
}

/// One chat-completion exchange returning the assistant text. Safe for
/// concurrent use.
pub trait ChatCompletion: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError>;
}

pub struct HttpChatClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpChatClient {
            client,
            endpoint: config.endpoint.clone(),
            api_key: config.api_key.clone(),
        })
    }
}

impl ChatCompletion for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| TransportError::retryable(format!("request failed: {e}")))?;

        let status = response.status();
        if !status.is_success() {
            let retryable =
                status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error();
            let body = response.text().unwrap_or_default();
            let err = TransportError {
                message: format!(
                    "status {status}: {}",
                    body.chars().take(200).collect::<String>()
                ),
                retryable,
            };
            return Err(err);
        }

        let parsed: ChatResponse = response
            .json()
            .map_err(|e| TransportError::fatal(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::fatal("response carried no choices"))
    }
}

fn chat_request(config: &LlmConfig, document: &PromptDocument) -> ChatRequest {
    ChatRequest {
        model: config.model.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: document.instruction.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: document.body.clone(),
            },
        ],
        temperature: config.temperature,
        max_tokens: config.max_output_tokens,
    }
}

/// Predict one instance through the chat endpoint, retrying transient
/// failures up to `max_retries` times with exponential backoff.
pub fn llm_predict(
    config: &LlmConfig,
    client: &dyn ChatCompletion,
    document: &PromptDocument,
) -> Result<Prediction> {
    let request = chat_request(config, document);
    let mut attempt: u32 = 0;
    loop {
        match client.complete(&request) {
            Ok(content) => {
                let label = parse_llm_response(&content)?;
                return Ok(Prediction {
                    instance_id: document.instance_id.clone(),
                    label,
                    score: None,
                    raw_response: Some(content),
                });
            }
            Err(failure) if failure.retryable && attempt < config.max_retries => {
                std::thread::sleep(Duration::from_millis(config.backoff_ms << attempt));
                attempt += 1;
            }
            Err(failure) => {
                return Err(Error::Transport {
                    instance_id: document.instance_id.clone(),
                    message: failure.message,
                });
            }
        }
    }
}

/// Predict a batch with at most `max_concurrent` requests in flight.
/// Results keep the input order; per-document failures do not abort the
/// batch.
pub fn llm_predict_batch(
    config: &LlmConfig,
    client: &dyn ChatCompletion,
    documents: &[PromptDocument],
) -> Vec<Result<Prediction>> {
    let workers = config.max_concurrent.min(documents.len()).max(1);
    let cursor = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Prediction>>>> =
        documents.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::SeqCst);
                if index >= documents.len() {
                    break;
                }
                let result = llm_predict(config, client, &documents[index]);
                *slots[index].lock().expect("result slot") = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot")
                .expect("worker filled every slot")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::OutcomeLabel;
    use crate::predict::MockChatClient;
    use crate::serialize::PromptFormat;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn document(id: &str, body: &str) -> PromptDocument {
        PromptDocument {
            instance_id: id.into(),
            format: PromptFormat::DetailedCode,
            window_days: 7,
            instruction: "answer yes or no".into(),
            body: body.into(),
            token_estimate: 10,
            visits_included: 1,
        }
    }

    fn fast_config() -> LlmConfig {
        LlmConfig {
            backoff_ms: 1,
            ..LlmConfig::default()
        }
    }

    #[test]
    fn retries_through_transient_failures() {
        let client = MockChatClient::scripted(vec![
            Err(TransportError::retryable("boom 1")),
            Err(TransportError::retryable("boom 2")),
            Ok("yes".to_string()),
        ]);
        let p = llm_predict(&fast_config(), &client, &document("i1", "x")).unwrap();
        assert_eq!(p.label, OutcomeLabel::Overdose);
        assert_eq!(client.calls(), 3);
    }

    #[test]
    fn exhausted_retries_surface_as_transport_errors() {
        let client = MockChatClient::scripted(vec![
            Err(TransportError::retryable("a")),
            Err(TransportError::retryable("b")),
            Err(TransportError::retryable("c")),
        ]);
        let config = LlmConfig {
            max_retries: 2,
            backoff_ms: 1,
            ..LlmConfig::default()
        };
        let err = llm_predict(&config, &client, &document("i9", "x")).unwrap_err();
        match err {
            Error::Transport { instance_id, .. } => assert_eq!(instance_id, "i9"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn fatal_failures_do_not_retry() {
        let client = MockChatClient::scripted(vec![Err(TransportError::fatal("teapot"))]);
        let config = LlmConfig {
            max_retries: 5,
            backoff_ms: 1,
            ..LlmConfig::default()
        };
        assert!(llm_predict(&config, &client, &document("i1", "x")).is_err());
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn unparseable_content_is_a_parse_error() {
        let client = MockChatClient::scripted(vec![Ok("the patient seems stable".into())]);
        let err = llm_predict(&fast_config(), &client, &document("i1", "x")).unwrap_err();
        assert!(matches!(err, Error::ResponseParse { .. }));
    }

    #[test]
    fn batch_respects_the_concurrency_bound() {
        let client =
            MockChatClient::always(OutcomeLabel::NoOverdose).with_hold(Duration::from_millis(15));
        let docs: Vec<PromptDocument> = (0..24)
            .map(|i| document(&format!("i{i}"), "body"))
            .collect();
        let config = LlmConfig {
            max_concurrent: 4,
            backoff_ms: 1,
            ..LlmConfig::default()
        };
        let results = llm_predict_batch(&config, &client, &docs);
        assert_eq!(results.len(), 24);
        assert!(results.iter().all(|r| r.is_ok()));
        assert!(
            client.peak_in_flight() <= 4,
            "peak {}",
            client.peak_in_flight()
        );
        assert!(client.peak_in_flight() >= 2, "no observed concurrency");
        // order preserved
        assert_eq!(results[5].as_ref().unwrap().instance_id, "i5");
    }

    /// Minimal single-threaded HTTP responder for exercising the real
    /// client: serves one canned response per accepted connection.
    fn serve_responses(
        responses: Vec<(u16, String)>,
    ) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen_bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = vec![0u8; 65536];
                let mut total = 0;
                // read until the end of the JSON body
                loop {
                    let n = stream.read(&mut buf[total..]).unwrap();
                    total += n;
                    let text = String::from_utf8_lossy(&buf[..total]);
                    if let Some(header_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find(|l| l.to_ascii_lowercase().starts_with("content-length"))
                            .and_then(|l| l.split(':').nth(1))
                            .and_then(|v| v.trim().parse::<usize>().ok())
                            .unwrap_or(0);
                        if total >= header_end + 4 + content_length {
                            seen_bodies.push(text[header_end + 4..].to_string());
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
            seen_bodies
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn chat_body(content: &str) -> String {
        format!(
            "{{\"choices\":[{{\"message\":{{\"role\":\"assistant\",\"content\":\"{content}\"}}}}]}}"
        )
    }

    #[test]
    fn http_client_round_trips_a_completion() {
        let (endpoint, server) = serve_responses(vec![(200, chat_body("no"))]);
        let config = LlmConfig {
            endpoint,
            backoff_ms: 1,
            ..LlmConfig::default()
        };
        let client = HttpChatClient::new(&config).unwrap();
        let p = llm_predict(&config, &client, &document("i1", "history")).unwrap();
        assert_eq!(p.label, OutcomeLabel::NoOverdose);
        let bodies = server.join().unwrap();
        // system = instruction, user = body
        assert!(bodies[0].contains("\"role\":\"system\""));
        assert!(bodies[0].contains("answer yes or no"));
        assert!(bodies[0].contains("\"role\":\"user\""));
        assert!(bodies[0].contains("history"));
        assert!(bodies[0].contains("\"temperature\":0.5"));
    }

    #[test]
    fn http_client_retries_server_errors() {
        let (endpoint, server) = serve_responses(vec![
            (500, "{}".into()),
            (503, "{}".into()),
            (200, chat_body("yes")),
        ]);
        let config = LlmConfig {
            endpoint,
            backoff_ms: 1,
            ..LlmConfig::default()
        };
        let client = HttpChatClient::new(&config).unwrap();
        let p = llm_predict(&config, &client, &document("i1", "x")).unwrap();
        assert_eq!(p.label, OutcomeLabel::Overdose);
        server.join().unwrap();
    }

    #[test]
    fn http_client_does_not_retry_client_errors() {
        let (endpoint, server) = serve_responses(vec![(400, "{\"error\":\"bad\"}".into())]);
        let config = LlmConfig {
            endpoint,
            max_retries: 3,
            backoff_ms: 1,
            ..LlmConfig::default()
        };
        let client = HttpChatClient::new(&config).unwrap();
        let err = llm_predict(&config, &client, &document("i2", "x")).unwrap_err();
        assert!(matches!(err, Error::Transport { .. }));
        server.join().unwrap();
    }
}
